use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub name: String,
    pub offset: u64,
    /// Total size including `overhead_bytes`.
    pub bytes: u64,
    /// Framing overhead beyond the pure-rate payload.
    pub overhead_bytes: u64,
}

/// Capacity-checked first-fit allocator over a flat device address space.
#[derive(Debug, Clone)]
pub struct DeviceArena {
    capacity: u64,
    live: BTreeMap<String, Allocation>,
    live_bytes: u64,
    peak_bytes: u64,
    peak_snapshot: Vec<Allocation>,
}

impl DeviceArena {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            live: BTreeMap::new(),
            live_bytes: 0,
            peak_bytes: 0,
            peak_snapshot: Vec::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }

    pub fn get(&self, name: &str) -> Option<&Allocation> {
        self.live.get(name)
    }

    pub fn allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.live.values()
    }

    pub fn alloc(&mut self, name: &str, payload_bytes: u64, overhead_bytes: u64) -> Result<&Allocation> {
        let bytes = payload_bytes + overhead_bytes;
        if bytes == 0 {
            return Err(Error::Config(format!("allocation `{name}` has zero size")));
        }
        if self.live.contains_key(name) {
            return Err(Error::Config(format!("allocation `{name}` already exists")));
        }
        let oom = || Error::OutOfDeviceMemory {
            name: name.to_owned(),
            requested: bytes,
            live: self.live_bytes,
            capacity: self.capacity,
        };
        if self.live_bytes.checked_add(bytes).is_none_or(|t| t > self.capacity) {
            return Err(oom());
        }
        let mut spans: Vec<(u64, u64)> = self.live.values().map(|a| (a.offset, a.bytes)).collect();
        spans.sort_unstable();
        let mut cursor = 0u64;
        let mut offset = None;
        for (o, b) in spans {
            if o - cursor >= bytes {
                offset = Some(cursor);
                break;
            }
            cursor = o + b;
        }
        let offset = match offset {
            Some(o) => o,
            None if self.capacity - cursor >= bytes => cursor,
            None => return Err(oom()),
        };
        self.live_bytes += bytes;
        self.live.insert(
            name.to_owned(),
            Allocation {
                name: name.to_owned(),
                offset,
                bytes,
                overhead_bytes,
            },
        );
        if self.live_bytes > self.peak_bytes {
            self.peak_bytes = self.live_bytes;
            self.peak_snapshot = self.live.values().cloned().collect();
        }
        Ok(&self.live[name])
    }

    pub fn dealloc(&mut self, name: &str) -> Result<()> {
        let a = self
            .live
            .remove(name)
            .ok_or_else(|| Error::DeviceFault(format!("free of unknown allocation `{name}`")))?;
        self.live_bytes -= a.bytes;
        Ok(())
    }

    /// Checks that live allocations are disjoint and inside capacity.
    pub fn audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut spans: Vec<&Allocation> = self.live.values().collect();
        spans.sort_by_key(|a| a.offset);
        for w in spans.windows(2) {
            if w[0].offset + w[0].bytes > w[1].offset {
                out.push(format!("`{}` overlaps `{}`", w[0].name, w[1].name));
            }
        }
        if let Some(last) = spans.last() {
            if last.offset + last.bytes > self.capacity {
                out.push(format!("`{}` exceeds capacity", last.name));
            }
        }
        out
    }

    /// Peak usage expressed in multiples of `unit_bytes`, framing overhead excluded.
    pub fn memory_report(&self, unit_bytes: u64) -> MemoryReport {
        let overhead: u64 = self.peak_snapshot.iter().map(|a| a.overhead_bytes).sum();
        let unit = unit_bytes.max(1) as f64;
        MemoryReport {
            capacity_bytes: self.capacity,
            unit_bytes,
            peak_bytes: self.peak_bytes,
            peak_overhead_bytes: overhead,
            peak_units: (self.peak_bytes - overhead) as f64 / unit,
            buffers: self
                .peak_snapshot
                .iter()
                .map(|a| BufferEntry {
                    name: a.name.clone(),
                    bytes: a.bytes,
                    overhead_bytes: a.overhead_bytes,
                    units: (a.bytes - a.overhead_bytes) as f64 / unit,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub name: String,
    pub bytes: u64,
    pub overhead_bytes: u64,
    pub units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub capacity_bytes: u64,
    /// One full working buffer of one dataset.
    pub unit_bytes: u64,
    pub peak_bytes: u64,
    pub peak_overhead_bytes: u64,
    pub peak_units: f64,
    pub buffers: Vec<BufferEntry>,
}
