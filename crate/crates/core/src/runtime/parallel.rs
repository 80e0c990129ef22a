use crate::error::Result;

/// Worker cap from `GLW_THREADS`; 1 when unset or unparsable.
pub fn threads_from_env() -> usize {
    std::env::var("GLW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// `f(0..n)` evaluated on up to `threads` scoped workers over contiguous
/// chunks; results come back in index order, so any later reduction is the
/// same as a sequential one.
pub fn par_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let lo = (w * chunk).min(n);
                let hi = ((w + 1) * chunk).min(n);
                s.spawn(move || (lo..hi).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        for threads in 1..6 {
            let v = par_map(11, threads, |i| Ok(i * i)).unwrap();
            assert_eq!(v, (0..11).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn propagates_errors() {
        let r: Result<Vec<usize>> = par_map(5, 3, |i| {
            if i == 3 {
                Err(crate::Error::Contract("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn empty_input() {
        assert!(par_map(0, 4, Ok).unwrap().is_empty());
    }
}
