//! Paged KV-cache block allocator with exact accounting.
//!
//! Blocks hold a fixed number of tokens; a resident request with t tokens
//! always owns exactly ceil(t / block_size) blocks. There is no swapping or
//! recomputation: callers that cannot allocate simply retry later.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Tokens per cache block used by the serving engine.
pub const DEFAULT_BLOCK_SIZE: u32 = 16;

/// Outcome of an allocation attempt. Rejections leave the allocator
/// untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admit {
    Ok,
    Rejected,
}

impl Admit {
    pub fn is_ok(&self) -> bool {
        matches!(self, Admit::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Resident {
    blocks: Vec<u64>,
    tokens: u64,
}

/// Block allocator over a byte budget.
#[derive(Debug, Clone)]
pub struct PagedAllocator {
    block_size: u32,
    total_blocks: u64,
    free: Vec<u64>,
    tables: BTreeMap<u64, Resident>,
}

impl PagedAllocator {
    /// Builds an allocator over `kv_capacity_bytes`. Errors if the capacity
    /// holds less than one block.
    pub fn new(kv_capacity_bytes: u64, block_size: u32, kv_bytes_per_token: u64) -> Result<Self> {
        if block_size == 0 || kv_bytes_per_token == 0 {
            return Err(Error::InvalidSpec(
                "block_size and kv_bytes_per_token must be >= 1".into(),
            ));
        }
        let block_bytes = block_size as u64 * kv_bytes_per_token;
        let total_blocks = kv_capacity_bytes / block_bytes;
        if total_blocks == 0 {
            return Err(Error::InsufficientMemory(format!(
                "KV capacity {kv_capacity_bytes} B holds less than one {block_bytes} B block"
            )));
        }
        // free list as a stack; highest ids handed out first
        let free = (0..total_blocks).collect();
        Ok(PagedAllocator {
            block_size,
            total_blocks,
            free,
            tables: BTreeMap::new(),
        })
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_blocks
    }

    pub fn free_blocks(&self) -> u64 {
        self.free.len() as u64
    }

    pub fn allocated_blocks(&self) -> u64 {
        self.total_blocks - self.free_blocks()
    }

    pub fn is_resident(&self, id: u64) -> bool {
        self.tables.contains_key(&id)
    }

    /// Tokens currently held by a resident request.
    pub fn tokens_of(&self, id: u64) -> Option<u64> {
        self.tables.get(&id).map(|r| r.tokens)
    }

    /// Blocks currently held by a resident request.
    pub fn blocks_of(&self, id: u64) -> Option<u64> {
        self.tables.get(&id).map(|r| r.blocks.len() as u64)
    }

    fn blocks_needed(&self, tokens: u64) -> u64 {
        tokens.div_ceil(self.block_size as u64)
    }

    /// Claims blocks for a prompt of `input_len` tokens.
    pub fn allocate_prompt(&mut self, id: u64, input_len: u32) -> Result<Admit> {
        if self.tables.contains_key(&id) {
            return Err(Error::DuplicateRequest(id));
        }
        let needed = self.blocks_needed(input_len as u64);
        if needed > self.free.len() as u64 {
            return Ok(Admit::Rejected);
        }
        let at = self.free.len() - needed as usize;
        let blocks = self.free.split_off(at);
        self.tables.insert(
            id,
            Resident {
                blocks,
                tokens: input_len as u64,
            },
        );
        Ok(Admit::Ok)
    }

    /// Appends one token; claims a new block only when crossing a block
    /// boundary. Rejected (state unchanged) if a block is needed and none
    /// is free.
    pub fn append_token(&mut self, id: u64) -> Result<Admit> {
        let needs_block = {
            let r = self
                .tables
                .get(&id)
                .ok_or(Error::RequestNotFound(id))?;
            r.tokens % self.block_size as u64 == 0
        };
        if needs_block && self.free.is_empty() {
            return Ok(Admit::Rejected);
        }
        let block = if needs_block { self.free.pop() } else { None };
        let r = self.tables.get_mut(&id).expect("checked above");
        if let Some(b) = block {
            r.blocks.push(b);
        }
        r.tokens += 1;
        Ok(Admit::Ok)
    }

    /// Returns all blocks of a request to the free pool; yields the count.
    pub fn release(&mut self, id: u64) -> Result<u64> {
        let r = self.tables.remove(&id).ok_or(Error::RequestNotFound(id))?;
        let freed = r.blocks.len() as u64;
        self.free.extend(r.blocks);
        Ok(freed)
    }

    /// Fraction of blocks in use, in [0, 1].
    pub fn usage(&self) -> f64 {
        self.allocated_blocks() as f64 / self.total_blocks as f64
    }
}
