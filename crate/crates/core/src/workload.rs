//! Request descriptions and deterministic workload generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A request reduced to what the simulator needs: token counts and arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Seconds since simulation start.
    pub arrival_time: f64,
    pub input_len: u32,
    pub output_len: u32,
}

/// Log-normal length sampler parameters. `mu`/`sigma` describe the
/// underlying normal; samples are rounded and clamped into `[1, max_len]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub mu: f64,
    pub sigma: f64,
    pub max_len: u32,
}

/// Request length generation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LengthMode {
    /// Every request uses the same input/output lengths.
    Fixed { input_len: u32, output_len: u32 },
    /// Lengths sampled per request from truncated log-normals.
    Distribution {
        input: LengthDistribution,
        output: LengthDistribution,
    },
}

/// Arrival process for the generated requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Arrival {
    /// All requests arrive at t = 0.
    AllAtOnce,
    /// Poisson arrivals with the given rate in requests per second.
    Poisson { rate: f64 },
}

/// Deterministic workload description; the same spec (including seed)
/// always generates the identical request list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub lengths: LengthMode,
    pub num_requests: u32,
    pub arrival: Arrival,
    pub seed: u64,
}

/// ShareGPT mean input/output lengths used as fixed-mode defaults.
pub const DEFAULT_INPUT_LEN: u32 = 161;
pub const DEFAULT_OUTPUT_LEN: u32 = 338;
/// Default request count for benchmark-style workloads.
pub const DEFAULT_NUM_REQUESTS: u32 = 2000;

impl WorkloadSpec {
    pub fn fixed(input_len: u32, output_len: u32, num_requests: u32, seed: u64) -> Self {
        WorkloadSpec {
            lengths: LengthMode::Fixed {
                input_len,
                output_len,
            },
            num_requests,
            arrival: Arrival::AllAtOnce,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidWorkload(msg));
        if self.num_requests == 0 {
            return fail("num_requests must be >= 1".into());
        }
        match &self.lengths {
            LengthMode::Fixed {
                input_len,
                output_len,
            } => {
                if *input_len == 0 || *output_len == 0 {
                    return fail("fixed lengths must be >= 1".into());
                }
            }
            LengthMode::Distribution { input, output } => {
                for (name, d) in [("input", input), ("output", output)] {
                    if d.max_len == 0 {
                        return fail(format!("{name} truncation bound leaves empty support"));
                    }
                    if !(d.sigma >= 0.0) || !d.mu.is_finite() {
                        return fail(format!("{name} log-normal parameters invalid"));
                    }
                }
            }
        }
        if let Arrival::Poisson { rate } = self.arrival {
            if !(rate > 0.0) {
                return fail(format!("poisson rate must be > 0, got {rate}"));
            }
        }
        Ok(())
    }
}

fn sample_len(dist: &LengthDistribution, rng: &mut ChaCha8Rng) -> u32 {
    let ln = LogNormal::new(dist.mu, dist.sigma).expect("validated parameters");
    let v = ln.sample(rng).round();
    (v.max(1.0) as u32).min(dist.max_len)
}

/// Generates the request list for a workload spec.
///
/// Draw order is fixed per request (input, output, then the arrival gap for
/// Poisson mode) so the output is a pure function of the spec.
pub fn generate_workload(ws: &WorkloadSpec) -> Result<Vec<Request>> {
    ws.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ws.seed);
    let exp = match ws.arrival {
        Arrival::Poisson { rate } => Some(Exp::new(rate).expect("validated rate")),
        Arrival::AllAtOnce => None,
    };

    let mut requests = Vec::with_capacity(ws.num_requests as usize);
    let mut clock = 0.0f64;
    for id in 0..ws.num_requests as u64 {
        let (input_len, output_len) = match &ws.lengths {
            LengthMode::Fixed {
                input_len,
                output_len,
            } => (*input_len, *output_len),
            LengthMode::Distribution { input, output } => {
                let i = sample_len(input, &mut rng);
                let o = sample_len(output, &mut rng);
                (i, o)
            }
        };
        let arrival_time = match &exp {
            Some(e) => {
                clock += e.sample(&mut rng);
                clock
            }
            None => 0.0,
        };
        requests.push(Request {
            id,
            arrival_time,
            input_len,
            output_len,
        });
    }
    Ok(requests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_mode_yields_identical_lengths() {
        let ws = WorkloadSpec::fixed(161, 338, 3, 0);
        let reqs = generate_workload(&ws).unwrap();
        assert_eq!(reqs.len(), 3);
        for r in &reqs {
            assert_eq!((r.input_len, r.output_len), (161, 338));
            assert_eq!(r.arrival_time, 0.0);
        }
    }

    #[test]
    fn minimal_request() {
        let ws = WorkloadSpec::fixed(1, 1, 1, 0);
        let reqs = generate_workload(&ws).unwrap();
        assert_eq!(reqs.len(), 1);
        assert_eq!((reqs[0].input_len, reqs[0].output_len), (1, 1));
    }

    #[test]
    fn distribution_mode_is_deterministic() {
        let ws = WorkloadSpec {
            lengths: LengthMode::Distribution {
                input: LengthDistribution {
                    mu: 161.0f64.ln(),
                    sigma: 0.8,
                    max_len: 1024,
                },
                output: LengthDistribution {
                    mu: 338.0f64.ln(),
                    sigma: 0.8,
                    max_len: 1024,
                },
            },
            num_requests: 500,
            arrival: Arrival::Poisson { rate: 4.0 },
            seed: 7,
        };
        let a = generate_workload(&ws).unwrap();
        let b = generate_workload(&ws).unwrap();
        assert_eq!(a, b);
        // arrivals sorted, lengths clamped
        for w in a.windows(2) {
            assert!(w[0].arrival_time <= w[1].arrival_time);
        }
        for r in &a {
            assert!(r.input_len >= 1 && r.input_len <= 1024);
            assert!(r.output_len >= 1 && r.output_len <= 1024);
        }
    }

    #[test]
    fn empty_support_rejected() {
        let ws = WorkloadSpec {
            lengths: LengthMode::Distribution {
                input: LengthDistribution {
                    mu: 1.0,
                    sigma: 0.5,
                    max_len: 0,
                },
                output: LengthDistribution {
                    mu: 1.0,
                    sigma: 0.5,
                    max_len: 10,
                },
            },
            num_requests: 1,
            arrival: Arrival::AllAtOnce,
            seed: 0,
        };
        assert!(generate_workload(&ws).is_err());
    }
}
