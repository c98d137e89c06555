//! Treatment-assignment mechanisms: complete randomization, rerandomization
//! and FSM acceptance sampling.
//!
//! Rerandomization and FSM share one acceptance loop parameterized by an ASMD
//! threshold. Candidates are drawn through a [`CandidatePool`] so several
//! designs can be resolved against the same candidate stream.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::Covariates;
use crate::error::{Error, Result};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Cr,
    Rr,
    Fsm,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Cr => "CR",
            DesignKind::Rr => "RR",
            DesignKind::Fsm => "FSM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Exactly `floor(n/2)` treated, uniformly over subsets.
    #[default]
    FixedHalf,
    /// Independent fair coins, redrawn until both groups are nonempty.
    Bernoulli,
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 80;
pub const DEFAULT_RR_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// ASMD acceptance bound; ignored for CR.
    pub threshold: f64,
    pub max_attempts: usize,
    pub allocation: Allocation,
}

impl DesignSpec {
    pub fn cr() -> Self {
        DesignSpec {
            kind: DesignKind::Cr,
            threshold: f64::INFINITY,
            max_attempts: 1,
            allocation: Allocation::FixedHalf,
        }
    }

    pub fn rr(threshold: f64) -> Self {
        DesignSpec {
            kind: DesignKind::Rr,
            threshold,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            allocation: Allocation::FixedHalf,
        }
    }

    pub fn fsm(epsilon: f64) -> Self {
        DesignSpec {
            kind: DesignKind::Fsm,
            ..Self::rr(epsilon)
        }
    }

    pub fn with_max_attempts(mut self, max_attempts: usize) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    pub fn with_allocation(mut self, allocation: Allocation) -> Self {
        self.allocation = allocation;
        self
    }

    /// The threshold as reported in output tables; `None` for CR.
    pub fn reported_threshold(&self) -> Option<f64> {
        match self.kind {
            DesignKind::Cr => None,
            _ => Some(self.threshold),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.kind != DesignKind::Cr && (self.threshold.is_nan() || self.threshold < 0.0) {
            return Err(Error::Config(format!(
                "{} threshold {} must be nonnegative",
                self.kind.name(),
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub t: Vec<bool>,
    pub n1: usize,
    pub n0: usize,
    /// 1-based index of the draw that produced this assignment.
    pub attempts: usize,
    pub achieved_asmd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentOutcome {
    Accepted(Assignment),
    /// No draw passed; carries the most balanced candidate seen. Its
    /// `attempts` field is the total number of draws made.
    Exhausted { best_seen: Assignment },
}

impl AssignmentOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, AssignmentOutcome::Accepted(_))
    }

    pub fn assignment(&self) -> &Assignment {
        match self {
            AssignmentOutcome::Accepted(a) => a,
            AssignmentOutcome::Exhausted { best_seen } => best_seen,
        }
    }

    /// Number of candidate draws consumed.
    pub fn attempts(&self) -> usize {
        self.assignment().attempts
    }
}

pub fn draw_candidate<R: Rng + ?Sized>(n: usize, allocation: Allocation, rng: &mut R) -> Vec<bool> {
    match allocation {
        Allocation::FixedHalf => {
            let mut t = vec![false; n];
            for i in index::sample(rng, n, n / 2) {
                t[i] = true;
            }
            t
        }
        Allocation::Bernoulli => loop {
            let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let k = t.iter().filter(|&&b| b).count();
            if k > 0 && k < n {
                break t;
            }
        },
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    t: Vec<bool>,
    asmd: f64,
}

/// Lazily drawn candidate stream over one covariate matrix.
///
/// Resolving several designs against the same pool gives each of them the
/// same candidates in the same order, so acceptance events are nested in the
/// threshold.
pub struct CandidatePool<'a, R: Rng> {
    x: &'a Covariates,
    allocation: Allocation,
    rng: R,
    drawn: Vec<Candidate>,
}

impl<'a, R: Rng> CandidatePool<'a, R> {
    pub fn new(x: &'a Covariates, allocation: Allocation, rng: R) -> Self {
        CandidatePool {
            x,
            allocation,
            rng,
            drawn: Vec::new(),
        }
    }

    pub fn allocation(&self) -> Allocation {
        self.allocation
    }

    /// Number of candidates drawn so far.
    pub fn len(&self) -> usize {
        self.drawn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drawn.is_empty()
    }

    fn candidate(&mut self, k: usize) -> Result<&Candidate> {
        while self.drawn.len() <= k {
            let t = draw_candidate(self.x.n(), self.allocation, &mut self.rng);
            let asmd = metrics::asmd(self.x, &t)?;
            self.drawn.push(Candidate { t, asmd });
        }
        Ok(&self.drawn[k])
    }

    fn to_assignment(&self, k: usize, attempts: usize) -> Assignment {
        let c = &self.drawn[k];
        let n1 = c.t.iter().filter(|&&b| b).count();
        Assignment {
            t: c.t.clone(),
            n1,
            n0: c.t.len() - n1,
            attempts,
            achieved_asmd: c.asmd,
        }
    }

    pub fn resolve(&mut self, spec: &DesignSpec) -> Result<AssignmentOutcome> {
        spec.validate()?;
        if spec.allocation != self.allocation {
            return Err(Error::Contract(format!(
                "design allocation {:?} does not match pool allocation {:?}",
                spec.allocation, self.allocation
            )));
        }
        if spec.kind == DesignKind::Cr {
            self.candidate(0)?;
            return Ok(AssignmentOutcome::Accepted(self.to_assignment(0, 1)));
        }
        let mut best = 0;
        for k in 0..spec.max_attempts {
            let asmd = self.candidate(k)?.asmd;
            if asmd <= spec.threshold {
                return Ok(AssignmentOutcome::Accepted(self.to_assignment(k, k + 1)));
            }
            if asmd < self.drawn[best].asmd {
                best = k;
            }
        }
        Ok(AssignmentOutcome::Exhausted {
            best_seen: self.to_assignment(best, spec.max_attempts),
        })
    }
}

/// Draws candidates until one meets the design's balance requirement.
pub fn assign<R: Rng>(x: &Covariates, spec: &DesignSpec, rng: R) -> Result<AssignmentOutcome> {
    CandidatePool::new(x, spec.allocation, rng).resolve(spec)
}
