//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the helpers use rayon when
//! asked to; without it every call runs sequentially. Results never depend on
//! the mode: maps preserve order and reductions break ties by index.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `(0..n).map(f)` in order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}

/// Index and value of the smallest `Some` cost over `0..n`; ties go to the
/// lower index.
pub fn argmin_range<R, F>(exec: Execution, n: usize, f: F) -> Option<(usize, f64, R)>
where
    R: Send,
    F: Fn(usize) -> Option<(f64, R)> + Sync + Send,
{
    let better = |a: Option<(usize, f64, R)>, b: Option<(usize, f64, R)>| match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                Some(b)
            } else {
                Some(a)
            }
        }
    };
    let eval = |i: usize| f(i).map(|(c, r)| (i, c, r)).filter(|(_, c, _)| !c.is_nan());
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(eval).reduce(|| None, better),
        _ => (0..n).map(eval).fold(None, better),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(map_range(exec, 5, |i| i * i), vec![0, 1, 4, 9, 16]);
            assert_eq!(map(exec, &[1.0, 2.0], |x| x * 2.0), vec![2.0, 4.0]);
            let best = argmin_range(exec, 10, |i| Some((((i as f64) - 4.5).abs(), i)));
            assert_eq!(best.map(|b| b.0), Some(4));
            assert!(argmin_range(exec, 3, |_| None::<(f64, ())>).is_none());
        }
    }
}
