use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferItem<T> {
    pub seq: u64,
    pub priority: u8,
    pub incident: Option<String>,
    pub item: T,
}

/// Bounded working set. When full, the lowest-priority item goes first,
/// oldest first among equals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermBuffer<T> {
    capacity: usize,
    items: Vec<BufferItem<T>>,
    next_seq: u64,
    current_incident: Option<String>,
}

impl<T: Clone> ShortTermBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ShortTermBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            next_seq: 0,
            current_incident: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn current_incident(&self) -> Option<&str> {
        self.current_incident.as_deref()
    }

    pub fn open_incident(&mut self, id: impl Into<String>) {
        self.current_incident = Some(id.into());
    }

    /// Pushes `item` tagged with the current incident. Returns the evicted
    /// item, which may be the one just pushed. Priorities above 3 are clamped.
    pub fn push(&mut self, item: T, priority: u8) -> Option<BufferItem<T>> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.items.push(BufferItem {
            seq,
            priority: priority.min(3),
            incident: self.current_incident.clone(),
            item,
        });
        if self.items.len() <= self.capacity {
            return None;
        }
        let victim = self
            .items
            .iter()
            .enumerate()
            .min_by_key(|(_, it)| (it.priority, it.seq))
            .map(|(i, _)| i)?;
        Some(self.items.remove(victim))
    }

    /// Items in insertion order.
    pub fn snapshot(&self) -> &[BufferItem<T>] {
        &self.items
    }

    pub fn items_for_incident<'a>(
        &'a self,
        incident: &'a str,
    ) -> impl Iterator<Item = &'a BufferItem<T>> + 'a {
        self.items
            .iter()
            .filter(move |it| it.incident.as_deref() == Some(incident))
    }

    /// Bulk-evicts everything tagged with `incident`; returns the count.
    pub fn close_incident(&mut self, incident: &str) -> usize {
        let before = self.items.len();
        self.items
            .retain(|it| it.incident.as_deref() != Some(incident));
        if self.current_incident.as_deref() == Some(incident) {
            self.current_incident = None;
        }
        before - self.items.len()
    }
}
