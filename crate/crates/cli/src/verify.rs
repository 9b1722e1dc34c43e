//! Closed-form checks of the training math.

use volaug::augment::RngStream;
use volaug::losses::{
    bce, ce, deep_supervision_loss, dice_loss, grad_bce, grad_dice, poly_lr, LrSchedule,
    Prediction, Target, DEFAULT_DICE_SMOOTH,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub expected: f64,
    pub got: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        (self.expected - self.got).abs() <= self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} expected {:<12.7} got {:<12.7} tol {:e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.expected,
            self.got,
            self.tolerance
        )
    }
}

const INSTANCES: u64 = 100;
const STEP: f64 = 1e-4;

fn random_pair(rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let n = 1 + rng.index(16);
    let p = (0..n).map(|_| rng.uniform(0.05, 0.95)).collect();
    let y = (0..n)
        .map(|_| if rng.gate(0.5) { 1.0 } else { 0.0 })
        .collect();
    (p, y)
}

/// Worst relative error between an analytic gradient and central differences.
fn gradient_error(
    f: impl Fn(&Prediction, &Target) -> f64,
    g: impl Fn(&Prediction, &Target) -> Vec<f64>,
    seed: u64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = RngStream::derive(seed, i, 0);
        let (p, y) = random_pair(&mut rng);
        let tgt = Target::new(y).expect("binary targets");
        let analytic = g(&Prediction::new(p.clone()).expect("in range"), &tgt);
        for (k, a) in analytic.iter().enumerate() {
            let at = |d: f64| {
                let mut q = p.clone();
                q[k] += d;
                f(&Prediction::new(q).expect("in range"), &tgt)
            };
            let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
        }
    }
    worst
}

fn ce_bce_gap(seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = RngStream::derive(seed, i, 1);
        let (p, y) = random_pair(&mut rng);
        let rows: Vec<[f64; 2]> = p.iter().map(|&v| [1.0 - v, v]).collect();
        let onehot: Vec<[f64; 2]> = y.iter().map(|&v| [1.0 - v, v]).collect();
        let a = ce(&rows, &onehot).expect("valid rows");
        let b = bce(&Prediction::new(p).unwrap(), &Target::new(y).unwrap()).unwrap();
        worst = worst.max((a - b).abs());
    }
    worst
}

pub fn run_checks() -> Vec<Check> {
    let sched = LrSchedule::with_default_exponent(0.01, 300).expect("valid schedule");
    let half = Prediction::new(vec![0.5]).unwrap();
    let one = Target::new(vec![1.0]).unwrap();
    let perfect = Prediction::new(vec![1.0, 0.0, 1.0]).unwrap();
    let perfect_t = Target::new(vec![1.0, 0.0, 1.0]).unwrap();
    vec![
        Check {
            name: "poly_lr epoch 150/300",
            expected: 0.01 * 0.5f64.powf(0.9),
            got: poly_lr(&sched, 150).unwrap(),
            tolerance: 1e-9,
        },
        Check {
            name: "poly_lr final epoch",
            expected: 0.0,
            got: poly_lr(&sched, 300).unwrap(),
            tolerance: 0.0,
        },
        Check {
            name: "deep supervision [1,1,1]",
            expected: 1.75,
            got: deep_supervision_loss(&[1.0, 1.0, 1.0]).unwrap(),
            tolerance: 0.0,
        },
        Check {
            name: "bce([0.5],[1])",
            expected: std::f64::consts::LN_2,
            got: bce(&half, &one).unwrap(),
            tolerance: 1e-9,
        },
        Check {
            name: "dice loss perfect",
            expected: 0.0,
            got: dice_loss(&perfect, &perfect_t, DEFAULT_DICE_SMOOTH).unwrap(),
            tolerance: 1e-12,
        },
        Check {
            name: "ce vs bce, 100 instances",
            expected: 0.0,
            got: ce_bce_gap(7),
            tolerance: 1e-7,
        },
        Check {
            name: "grad bce, 100 instances",
            expected: 0.0,
            got: gradient_error(
                |p, t| bce(p, t).unwrap(),
                |p, t| grad_bce(p, t).unwrap(),
                11,
            ),
            tolerance: 1e-5,
        },
        Check {
            name: "grad dice, 100 instances",
            expected: 0.0,
            got: gradient_error(
                |p, t| dice_loss(p, t, DEFAULT_DICE_SMOOTH).unwrap(),
                |p, t| grad_dice(p, t, DEFAULT_DICE_SMOOTH).unwrap(),
                13,
            ),
            tolerance: 1e-5,
        },
    ]
}
