//! Key-value run configuration.
//!
//! One `key = value` per line; `#` starts a comment. Recognised keys:
//!
//! | key             | default        | meaning                                   |
//! |-----------------|----------------|-------------------------------------------|
//! | `n`             | 16             | players                                   |
//! | `epsilon`       | 0.01           | bad players `t = ⌊(1/8 − ε) n⌋`            |
//! | `t`             | from epsilon   | explicit bad-player count                 |
//! | `seed`          | 0              | run seed                                  |
//! | `strategy`      | `random`       | `fifo`, `random`, `maxchain`, `stall:1,2` |
//! | `step_budget`   | 200000000      | delivery budget                           |
//! | `modulus`       | 2147483647     | field: 2147483647, 65537, 101, 11 or 7    |
//! | `c`             | by n           | quorum size `⌈c log2 n⌉`                   |
//! | `delta`         | 0.05           | per-quorum slack over `t/n`               |
//! | `c_lb`          | 6              | membership bound `c_lb log2 n`            |
//! | `default_input` | 0              | value used for excluded inputs            |
//! | `circuit`       | none           | family used when no circuit file is given |

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::run::{quorum_params_for, CircuitSource, MpcConfig};
use crate::circuit::Family;
use crate::quorum::QuorumParams;
use crate::simnet::{max_bad, Behavior, Strategy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {value}")]
    BadValue { line: usize, key: String, value: String },
    #[error("unsupported field modulus {0} (use 2147483647, 65537, 101, 11 or 7)")]
    Modulus(u64),
    #[error("{0}")]
    Invalid(String),
}

pub const SUPPORTED_MODULI: [u64; 5] = [2_147_483_647, 65_537, 101, 11, 7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub epsilon: f64,
    pub t: Option<usize>,
    pub seed: u64,
    pub strategy: Strategy,
    pub step_budget: u64,
    pub modulus: u64,
    pub quorum: QuorumParams,
    pub default_input: u64,
    pub circuit: Option<Family>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 16,
            epsilon: 0.01,
            t: None,
            seed: 0,
            strategy: Strategy::RandomDelay,
            step_budget: 200_000_000,
            modulus: SUPPORTED_MODULI[0],
            quorum: quorum_params_for(16),
            default_input: 0,
            circuit: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue { line, key: key.into(), value: v.into() })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut c_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: "expected `key = value`".into() })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "n" => cfg.n = value(line, k, v)?,
                "epsilon" => cfg.epsilon = value(line, k, v)?,
                "t" => cfg.t = Some(value(line, k, v)?),
                "seed" => cfg.seed = value(line, k, v)?,
                "strategy" => {
                    cfg.strategy = Strategy::parse(v)
                        .ok_or_else(|| ConfigError::BadValue { line, key: k.into(), value: v.into() })?
                }
                "step_budget" => cfg.step_budget = value(line, k, v)?,
                "modulus" => cfg.modulus = value(line, k, v)?,
                "c" => {
                    cfg.quorum.c = value(line, k, v)?;
                    c_set = true;
                }
                "delta" => cfg.quorum.delta = value(line, k, v)?,
                "c_lb" => cfg.quorum.c_lb = value(line, k, v)?,
                "default_input" => cfg.default_input = value(line, k, v)?,
                "circuit" => {
                    cfg.circuit = Some(
                        Family::parse(v).ok_or_else(|| ConfigError::BadValue { line, key: k.into(), value: v.into() })?,
                    )
                }
                _ => return Err(ConfigError::UnknownKey { line, key: k.into() }),
            }
        }
        if !c_set {
            cfg.quorum.c = quorum_params_for(cfg.n).c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !SUPPORTED_MODULI.contains(&self.modulus) {
            return Err(ConfigError::Modulus(self.modulus));
        }
        if self.n < 2 {
            return Err(ConfigError::Invalid("n must be at least 2".into()));
        }
        if !(0.0..0.125).contains(&self.epsilon) {
            return Err(ConfigError::Invalid("epsilon must lie in [0, 1/8)".into()));
        }
        if self.t.is_some_and(|t| t >= self.n) {
            return Err(ConfigError::Invalid("t must be below n".into()));
        }
        Ok(())
    }

    /// Number of bad players.
    pub fn bad_players(&self) -> usize {
        self.t.unwrap_or_else(|| max_bad(self.n, self.epsilon))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "n = {}\nepsilon = {}\nseed = {}\nstrategy = {}\nstep_budget = {}\nmodulus = {}\nc = {}\ndelta = {}\nc_lb = {}\ndefault_input = {}\n",
            self.n,
            self.epsilon,
            self.seed,
            self.strategy.name(),
            self.step_budget,
            self.modulus,
            self.quorum.c,
            self.quorum.delta,
            self.quorum.c_lb,
            self.default_input
        );
        if let Some(t) = self.t {
            s.push_str(&format!("t = {t}\n"));
        }
        s
    }

    pub fn mpc(&self, circuit: CircuitSource, behaviors: Vec<Behavior>) -> MpcConfig {
        MpcConfig {
            n: self.n,
            t: self.bad_players(),
            behaviors,
            strategy: self.strategy.clone(),
            seed: self.seed,
            circuit,
            quorum: self.quorum,
            step_budget: self.step_budget,
            default_input: self.default_input,
            trace: false,
        }
    }
}

/// Runs `$body` with `$F` bound to the field type for `$modulus`.
#[macro_export]
macro_rules! with_field {
    ($modulus:expr, $F:ident => $body:expr) => {
        match $modulus {
            2_147_483_647 => {
                type $F = $crate::Fp31;
                $body
            }
            65_537 => {
                type $F = $crate::F65537;
                $body
            }
            101 => {
                type $F = $crate::F101;
                $body
            }
            11 => {
                type $F = $crate::F11;
                $body
            }
            7 => {
                type $F = $crate::F7;
                $body
            }
            m => panic!("unsupported modulus {m}"),
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    #[test]
    fn parses_all_keys() {
        let text = "# run\nn = 32\nepsilon = 0.02\nseed = 7\nstrategy = maxchain\nstep_budget = 1000\nmodulus = 101\n\
                    c = 3\ndelta = 0.1\nc_lb = 8\ndefault_input = 5\ncircuit = random_dag:64\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.n, 32);
        assert_eq!(c.bad_players(), 3);
        assert_eq!(c.strategy, Strategy::MaxChain);
        assert_eq!(c.modulus, 101);
        assert_eq!(c.quorum.c, 3.0);
        assert_eq!(c.circuit, Some(Family::RandomDag { m: 64 }));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap().quorum, c.quorum);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("x = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("n 5"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("n = five"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("modulus = 97"), Err(ConfigError::Modulus(97))));
        assert!(matches!(RunConfig::parse("epsilon = 0.2"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn field_dispatch() {
        for m in SUPPORTED_MODULI {
            let got = with_field!(m, F => F::MODULUS);
            assert_eq!(got, m);
        }
    }
}
