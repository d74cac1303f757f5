use std::ops::Range;

use crate::error::{Error, Result};

/// Contiguous, ordered, non-empty groups of positions covering `0..T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    ends: Vec<usize>,
}

impl Segmentation {
    /// Builds from exclusive group ends; the last end is the sequence length.
    pub fn from_ends(ends: Vec<usize>) -> Result<Self> {
        if ends.is_empty() {
            return Err(Error::InvalidArgument(
                "segmentation needs at least one group".into(),
            ));
        }
        let mut prev = 0;
        for &e in &ends {
            if e <= prev {
                return Err(Error::InvalidArgument(format!(
                    "group ends {ends:?} must be strictly increasing and positive"
                )));
            }
            prev = e;
        }
        Ok(Self { ends })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let ends = sizes
            .iter()
            .scan(0usize, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect::<Vec<_>>();
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("empty group".into()));
        }
        Self::from_ends(ends)
    }

    /// `groups` modules of length `T / groups`; the last one absorbs the remainder.
    pub fn equal(seq: usize, groups: usize) -> Result<Self> {
        if groups == 0 || groups > seq {
            return Err(Error::InvalidArgument(format!(
                "cannot split {seq} positions into {groups} groups (T // G must be >= 1)"
            )));
        }
        let size = seq / groups;
        let mut ends: Vec<usize> = (1..groups).map(|g| g * size).collect();
        ends.push(seq);
        Self::from_ends(ends)
    }

    pub fn seq_len(&self) -> usize {
        *self.ends.last().expect("non-empty")
    }

    pub fn num_groups(&self) -> usize {
        self.ends.len()
    }

    pub fn max_group(&self) -> usize {
        self.groups().map(|r| r.len()).max().unwrap_or(0)
    }

    pub fn groups(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.ends.iter().copied());
        starts.zip(self.ends.iter().copied()).map(|(s, e)| s..e)
    }
}
