//! Execution strategy for the data-parallel pixel kernels.
//!
//! With the `parallel` feature (default) row-wise kernels fan out over the
//! rayon pool. Without it, or with [`Exec::Sequential`], every kernel runs on
//! the calling thread. Both paths produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Uses rayon when compiled with the `parallel` feature, otherwise
    /// behaves like `Sequential`.
    #[default]
    Parallel,
}

/// Elements handed to one rayon task by [`Exec::for_each_row`].
#[cfg(feature = "parallel")]
const BAND_ELEMENTS: usize = 64 * 1024;

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Apply `f(row_index, row)` to each `width`-sized chunk of `data`.
    pub fn for_each_row<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        debug_assert!(width > 0);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            let band = (BAND_ELEMENTS / width).max(1);
            data.par_chunks_mut(width * band).enumerate().for_each(|(i, rows)| {
                for (j, row) in rows.chunks_mut(width).enumerate() {
                    f(i * band + j, row);
                }
            });
            return;
        }
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| f(y, row));
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_agree() {
        let mut a = vec![0u32; 12];
        let mut b = a.clone();
        let fill = |y: usize, row: &mut [u32]| {
            for (x, v) in row.iter_mut().enumerate() {
                *v = (y * 10 + x) as u32;
            }
        };
        Exec::Sequential.for_each_row(&mut a, 4, fill);
        Exec::Parallel.for_each_row(&mut b, 4, fill);
        assert_eq!(a, b);
        assert_eq!(a[5], 11);

        let items: Vec<u32> = (0..100).collect();
        assert_eq!(
            Exec::Sequential.map(&items, |v| v * 2),
            Exec::Parallel.map(&items, |v| v * 2)
        );
    }

    #[test]
    fn row_indices_survive_banding() {
        let (w, h) = (1000, 203);
        let mut seq = vec![0usize; w * h];
        let mut par = seq.clone();
        let tag = |y: usize, row: &mut [usize]| row.iter_mut().for_each(|v| *v = y);
        Exec::Sequential.for_each_row(&mut seq, w, tag);
        Exec::Parallel.for_each_row(&mut par, w, tag);
        assert_eq!(seq, par);
        assert_eq!(par[w * 202], 202);
    }
}
