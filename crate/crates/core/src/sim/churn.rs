use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnKind {
    Join,
    Leave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChurnEvent {
    pub time_ms: u64,
    pub kind: ChurnKind,
}

fn poisson<R: Rng>(rng: &mut R, rate_per_s: f64, start: u64, end: u64, kind: ChurnKind, out: &mut Vec<ChurnEvent>) {
    if rate_per_s <= 0.0 || !rate_per_s.is_finite() {
        return;
    }
    let mut t = start as f64;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate_per_s * 1_000.0;
        let ms = t.ceil() as u64;
        if ms >= end {
            break;
        }
        out.push(ChurnEvent { time_ms: ms, kind });
    }
}

/// Poisson joins and leaves in `[start_ms, end_ms)`, rounded up to whole
/// milliseconds and sorted by time.
pub fn churn_process(rate_join_per_s: f64, rate_leave_per_s: f64, start_ms: u64, end_ms: u64, seed: u64) -> Vec<ChurnEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0063_6875_726e);
    let mut out = Vec::new();
    poisson(&mut rng, rate_join_per_s, start_ms, end_ms, ChurnKind::Join, &mut out);
    poisson(&mut rng, rate_leave_per_s, start_ms, end_ms, ChurnKind::Leave, &mut out);
    out.sort_by_key(|e| (e.time_ms, e.kind));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_leave_rate_no_leaves() {
        let ev = churn_process(2.0, 0.0, 0, 60_000, 1);
        assert!(!ev.is_empty());
        assert!(ev.iter().all(|e| e.kind == ChurnKind::Join));
    }

    #[test]
    fn seeded() {
        assert_eq!(churn_process(1.0, 1.0, 0, 60_000, 5), churn_process(1.0, 1.0, 0, 60_000, 5));
        assert_ne!(churn_process(1.0, 1.0, 0, 60_000, 5), churn_process(1.0, 1.0, 0, 60_000, 6));
    }

    #[test]
    fn rate_is_roughly_right() {
        let ev = churn_process(0.0, 5.0, 0, 1_000_000, 3);
        let n = ev.len() as f64;
        assert!((4_500.0..5_500.0).contains(&n), "{n}");
        assert!(ev.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
        assert!(ev.iter().all(|e| e.time_ms < 1_000_000));
    }
}
