use crate::scalar::Real;

/// Flat view of a parameter collection as a list of contiguous blocks.
///
/// Gradient buffers implement the same trait with identical block order
/// and lengths so optimizers can pair them up positionally.
pub trait Params<T: Real> {
    fn blocks(&self) -> Vec<&[T]>;

    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    fn block_lens(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Index of the first block holding a non-finite value.
    fn first_non_finite(&self) -> Option<usize> {
        self.blocks()
            .iter()
            .position(|b| b.iter().any(|v| !v.is_finite()))
    }
}
