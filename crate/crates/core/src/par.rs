//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers fan out on the global rayon pool
//! (or whatever pool the caller installed). Inside [`sequential`] they run on
//! the calling thread, which is how the benches compare both paths in one
//! binary. Every helper writes results by index, so output never depends on
//! scheduling.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with all helpers in this module forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|c| c.set(self.0));
        }
    }
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let _reset = Reset(prev);
    f()
}

/// True when helpers called from this thread may use worker threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fill `out` row by row; `f(row, row_slice)`.
pub fn for_each_row<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    out.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
}

/// Map every item of a slice, preserving order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_flag_is_scoped() {
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
        sequential(|| {
            assert!(!is_parallel());
            sequential(|| assert!(!is_parallel()));
            assert!(!is_parallel());
        });
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
    }

    #[test]
    fn helpers_agree_across_modes() {
        let par = map_range(1000, |i| i * i);
        let seq = sequential(|| map_range(1000, |i| i * i));
        assert_eq!(par, seq);

        let mut a = vec![0usize; 60];
        let mut b = vec![0usize; 60];
        for_each_row(&mut a, 6, |r, row| row.iter_mut().enumerate().for_each(|(c, v)| *v = r * 10 + c));
        sequential(|| for_each_row(&mut b, 6, |r, row| row.iter_mut().enumerate().for_each(|(c, v)| *v = r * 10 + c)));
        assert_eq!(a, b);
    }
}
