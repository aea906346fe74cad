use std::time::Duration;

/// Errors that may succeed when the same request is sent again.
pub trait Retryable {
    fn is_retryable(&self) -> bool;
}

/// Exponential backoff: waits `base_delay · 2^(attempt-1)` between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// `max_attempts` is reached. Returns the outcome and the attempt count.
    pub fn run<T, E: Retryable + std::fmt::Display>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
    ) -> (Result<T, E>, u32) {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if attempt < max && e.is_retryable() => {
                    let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
                    log::warn!("attempt {attempt}/{max} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct E(bool);
    impl Retryable for E {
        fn is_retryable(&self) -> bool {
            self.0
        }
    }
    impl std::fmt::Display for E {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, "e")
        }
    }

    #[test]
    fn stops_on_success() {
        let (r, n) = RetryPolicy::no_delay(3).run(|a| if a < 3 { Err(E(true)) } else { Ok(a) });
        assert_eq!((r.unwrap(), n), (3, 3));
    }

    #[test]
    fn gives_up_after_max() {
        let (r, n) = RetryPolicy::no_delay(3).run(|_| Err::<(), _>(E(true)));
        assert!(r.is_err());
        assert_eq!(n, 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let (r, n) = RetryPolicy::no_delay(3).run(|_| Err::<(), _>(E(false)));
        assert!(r.is_err());
        assert_eq!(n, 1);
    }
}
