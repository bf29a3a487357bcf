//! Order-preserving map over independent tasks, parallel when the
//! `parallel` feature is enabled and the caller allows it.

/// True when the crate was built with rayon support.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `items`, keeping input order in the output. Falls back to a
/// sequential loop when `allow_parallel` is false or the feature is off.
pub fn try_map<T, R, E, F>(items: &[T], allow_parallel: bool, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if allow_parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = allow_parallel;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_both_ways() {
        let items: Vec<u32> = (0..100).collect();
        for par in [false, true] {
            let out: Result<Vec<u32>, ()> = try_map(&items, par, |x| Ok(x * 2));
            assert_eq!(out.unwrap(), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn propagates_errors() {
        let items: Vec<u32> = (0..10).collect();
        let out: Result<Vec<u32>, String> =
            try_map(&items, true, |&x| if x == 7 { Err("seven".into()) } else { Ok(x) });
        assert_eq!(out.unwrap_err(), "seven");
    }
}
