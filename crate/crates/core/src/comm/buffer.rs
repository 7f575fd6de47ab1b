use std::collections::VecDeque;
use std::sync::Arc;

use super::CommError;

/// One chain element: an agent's observation vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Message(Arc<[f64]>);

impl Message {
    pub fn new(payload: &[f64]) -> Self {
        Self(Arc::from(payload))
    }

    pub fn payload(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bounded FIFO inbox. Pushing into a full buffer evicts the oldest message.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageBuffer {
    queue: VecDeque<Message>,
    capacity: usize,
    msg_len: usize,
}

impl MessageBuffer {
    pub fn new(capacity: usize, msg_len: usize) -> Self {
        Self {
            queue: VecDeque::with_capacity(capacity),
            capacity,
            msg_len,
        }
    }

    /// Rebuilds a buffer from a snapshot, keeping only the newest
    /// `capacity` messages.
    pub fn from_messages(capacity: usize, msg_len: usize, messages: &[Message]) -> Result<Self, CommError> {
        let mut b = Self::new(capacity, msg_len);
        for m in messages {
            b.push(m.clone())?;
        }
        Ok(b)
    }

    pub fn push(&mut self, msg: Message) -> Result<(), CommError> {
        if msg.len() != self.msg_len {
            return Err(CommError::PayloadLength {
                expected: self.msg_len,
                got: msg.len(),
            });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
        }
        self.queue.push_back(msg);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn msg_len(&self) -> usize {
        self.msg_len
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.queue.iter()
    }

    pub fn snapshot(&self) -> Vec<Message> {
        self.queue.iter().cloned().collect()
    }
}

/// Empties every buffer at the start of an environment step.
pub fn begin_step(buffers: &mut [MessageBuffer]) {
    buffers.iter_mut().for_each(MessageBuffer::clear);
}

/// The chain a sender forwards: its buffer in FIFO order followed by its own
/// observation as the newest element.
pub fn compose_outgoing(sender_buffer: &[Message], sender_obs: &[f64]) -> Vec<Message> {
    let mut out = Vec::with_capacity(sender_buffer.len() + 1);
    out.extend_from_slice(sender_buffer);
    out.push(Message::new(sender_obs));
    out
}

/// Pushes `payloads` in order; older entries are evicted as needed.
pub fn deliver(payloads: &[Message], receiver: &mut MessageBuffer) -> Result<(), CommError> {
    if let Some(bad) = payloads.iter().find(|m| m.len() != receiver.msg_len) {
        return Err(CommError::PayloadLength {
            expected: receiver.msg_len,
            got: bad.len(),
        });
    }
    for m in payloads {
        receiver.push(m.clone())?;
    }
    Ok(())
}
