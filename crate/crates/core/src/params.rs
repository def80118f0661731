//! Model constants and their admissibility checks.
//!
//! Reserves follow `dX^i = <alpha^i_[t], theta> dt + sigma dW^i` where `theta`
//! is a finite signed measure on `[0, delay]`; the repayment model uses
//! `theta = delta_0 - delta_delay`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// One atom of the delay measure: weight applied to the control `lag` time units ago.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayAtom {
    pub lag: f64,
    pub weight: f64,
}

/// Finite signed discrete measure on `[0, delay]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMeasure {
    pub atoms: Vec<DelayAtom>,
}

impl DelayMeasure {
    /// Borrow now, repay after `delay`: `delta_0 - delta_delay`.
    pub fn repayment(delay: f64) -> Self {
        DelayMeasure {
            atoms: vec![
                DelayAtom { lag: 0.0, weight: 1.0 },
                DelayAtom { lag: delay, weight: -1.0 },
            ],
        }
    }

    pub fn is_repayment(&self, delay: f64) -> bool {
        *self == Self::repayment(delay)
    }

    /// Total weight at lag zero.
    pub fn weight_at_zero(&self) -> f64 {
        self.atoms.iter().filter(|a| a.lag == 0.0).map(|a| a.weight).sum()
    }
}

impl fmt::Display for DelayMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .atoms
            .iter()
            .map(|a| format!("{}:{:+}", a.lag, a.weight))
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl FromStr for DelayMeasure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut atoms = Vec::new();
        for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (lag, weight) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected lag:weight, got '{pair}'"))?;
            let lag: f64 = lag.trim().parse().map_err(|_| format!("bad lag '{lag}'"))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| format!("bad weight '{weight}'"))?;
            atoms.push(DelayAtom { lag, weight });
        }
        if atoms.is_empty() {
            return Err("empty delay measure".into());
        }
        Ok(DelayMeasure { atoms })
    }
}

/// All model constants of the lending game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub n_players: usize,
    pub sigma: f64,
    /// Incentive to lend/borrow towards the average.
    pub q: f64,
    /// Quadratic penalty on the spread to the average.
    pub epsilon: f64,
    /// Terminal penalty.
    pub c: f64,
    pub horizon: f64,
    pub delay: f64,
    pub initial_reserves: Vec<f64>,
    pub delay_measure: DelayMeasure,
}

impl GameParams {
    /// Parameters with zero initial spread and the repayment delay measure.
    pub fn new(n_players: usize, sigma: f64, q: f64, epsilon: f64, c: f64, horizon: f64, delay: f64) -> Self {
        GameParams {
            n_players,
            sigma,
            q,
            epsilon,
            c,
            horizon,
            delay,
            initial_reserves: vec![0.0; n_players],
            delay_measure: DelayMeasure::repayment(delay),
        }
    }

    pub fn with_reserves(mut self, xi: Vec<f64>) -> Self {
        self.initial_reserves = xi;
        self
    }

    /// Change the delay, keeping the delay measure in repayment form.
    pub fn with_delay(mut self, delay: f64) -> Self {
        self.delay = delay;
        self.delay_measure = DelayMeasure::repayment(delay);
        self
    }

    /// `1 - 1/N`
    pub fn a1(&self) -> f64 {
        1.0 - 1.0 / self.n_players as f64
    }

    /// `1 - 1/N^2`
    pub fn a2(&self) -> f64 {
        let n = self.n_players as f64;
        1.0 - 1.0 / (n * n)
    }

    pub fn mean_reserve(&self) -> f64 {
        self.initial_reserves.iter().sum::<f64>() / self.n_players as f64
    }

    /// Full admissibility check for the delayed game.
    pub fn validate(&self) -> Result<&Self> {
        self.validate_basic()?;
        let q2 = self.q * self.q;
        if q2 >= self.epsilon {
            return Err(GameError::ConvexityViolated { q2, epsilon: self.epsilon });
        }
        let n = self.n_players as f64;
        let lhs = q2 * (1.0 - 1.0 / (2.0 * n)).powi(2);
        let rhs = self.epsilon * (1.0 - 1.0 / n);
        if lhs > rhs {
            return Err(GameError::Condition31Violated { lhs, rhs });
        }
        Ok(self)
    }

    /// Checks for the no-delay benchmark: `epsilon = q^2` is admitted (with a
    /// warning) and the delay-game standing condition is not required.
    pub fn validate_nodelay(&self) -> Result<&Self> {
        self.validate_basic()?;
        let q2 = self.q * self.q;
        if q2 > self.epsilon {
            return Err(GameError::ConvexityViolated { q2, epsilon: self.epsilon });
        }
        if q2 == self.epsilon {
            log::warn!("epsilon = q^2: running cost is convex but not strictly convex");
        }
        Ok(self)
    }

    fn validate_basic(&self) -> Result<()> {
        if self.n_players < 2 {
            return Err(GameError::DegenerateGame(self.n_players));
        }
        for (name, value) in [("sigma", self.sigma), ("epsilon", self.epsilon), ("horizon", self.horizon)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(GameError::NonPositive { name, value });
            }
        }
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(GameError::InvalidParam(format!("q must be >= 0, got {}", self.q)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(GameError::InvalidParam(format!("c must be >= 0, got {}", self.c)));
        }
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            return Err(GameError::BadDelay(format!("delay must be >= 0, got {}", self.delay)));
        }
        for atom in &self.delay_measure.atoms {
            if !(atom.lag >= 0.0 && atom.lag <= self.delay) {
                return Err(GameError::BadDelay(format!(
                    "lag {} outside [0, {}]",
                    atom.lag, self.delay
                )));
            }
            if !atom.weight.is_finite() {
                return Err(GameError::BadDelay(format!("non-finite weight at lag {}", atom.lag)));
            }
        }
        if self.initial_reserves.len() != self.n_players {
            return Err(GameError::InvalidParam(format!(
                "initial_reserves has {} entries, expected {}",
                self.initial_reserves.len(),
                self.n_players
            )));
        }
        if self.initial_reserves.iter().any(|x| !x.is_finite()) {
            return Err(GameError::InvalidParam("non-finite initial reserve".into()));
        }
        Ok(())
    }

    /// Parse the `key = value` configuration format.
    ///
    /// Recognized keys: n_players, sigma, q, epsilon, c, horizon, delay,
    /// initial_reserves (comma separated) and delay_measure
    /// (`lag:weight` pairs separated by `;`). Blank lines and `#` comments
    /// are skipped. A missing delay_measure means `0:+1; <delay>:-1`, and
    /// missing reserves mean all zero.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut builder = ConfigBuilder::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(GameError::Config { line: idx + 1, msg: format!("expected key = value, got '{line}'") })?;
            builder
                .set(key.trim(), value.trim())
                .map_err(|msg| GameError::Config { line: idx + 1, msg })?;
        }
        builder.build()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_config(&text)
    }

    /// Apply a `key=value` override on top of these parameters.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut builder = ConfigBuilder::from_params(self);
        builder
            .set(key, value)
            .map_err(|msg| GameError::Config { line: 0, msg })?;
        *self = builder.build()?;
        Ok(())
    }

    /// Serialize back into the configuration format.
    pub fn to_config(&self) -> String {
        let reserves: Vec<String> = self.initial_reserves.iter().map(|x| x.to_string()).collect();
        format!(
            "n_players = {}\nsigma = {}\nq = {}\nepsilon = {}\nc = {}\nhorizon = {}\ndelay = {}\ninitial_reserves = {}\ndelay_measure = {}\n",
            self.n_players,
            self.sigma,
            self.q,
            self.epsilon,
            self.c,
            self.horizon,
            self.delay,
            reserves.join(", "),
            self.delay_measure
        )
    }
}

#[derive(Default)]
struct ConfigBuilder {
    n_players: Option<usize>,
    sigma: Option<f64>,
    q: Option<f64>,
    epsilon: Option<f64>,
    c: Option<f64>,
    horizon: Option<f64>,
    delay: Option<f64>,
    initial_reserves: Option<Vec<f64>>,
    delay_measure: Option<DelayMeasure>,
}

impl ConfigBuilder {
    fn from_params(p: &GameParams) -> Self {
        ConfigBuilder {
            n_players: Some(p.n_players),
            sigma: Some(p.sigma),
            q: Some(p.q),
            epsilon: Some(p.epsilon),
            c: Some(p.c),
            horizon: Some(p.horizon),
            delay: Some(p.delay),
            initial_reserves: Some(p.initial_reserves.clone()),
            // a repayment measure follows the delay when overridden
            delay_measure: (!p.delay_measure.is_repayment(p.delay)).then(|| p.delay_measure.clone()),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{key}: bad number '{v}'"));
        match key {
            "n_players" => {
                self.n_players = Some(value.parse().map_err(|_| format!("n_players: bad integer '{value}'"))?)
            }
            "sigma" => self.sigma = Some(num(value)?),
            "q" => self.q = Some(num(value)?),
            "epsilon" => self.epsilon = Some(num(value)?),
            "c" => self.c = Some(num(value)?),
            "horizon" => self.horizon = Some(num(value)?),
            "delay" => self.delay = Some(num(value)?),
            "initial_reserves" => {
                let xs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                self.initial_reserves = Some(xs);
            }
            "delay_measure" => self.delay_measure = Some(value.parse()?),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    fn build(self) -> Result<GameParams> {
        fn need<T>(v: Option<T>, key: &str) -> Result<T> {
            v.ok_or_else(|| GameError::Config { line: 0, msg: format!("missing key '{key}'") })
        }
        let n_players = need(self.n_players, "n_players")?;
        let delay = need(self.delay, "delay")?;
        Ok(GameParams {
            n_players,
            sigma: need(self.sigma, "sigma")?,
            q: need(self.q, "q")?,
            epsilon: need(self.epsilon, "epsilon")?,
            c: need(self.c, "c")?,
            horizon: need(self.horizon, "horizon")?,
            delay,
            initial_reserves: self.initial_reserves.unwrap_or_else(|| vec![0.0; n_players]),
            delay_measure: self.delay_measure.unwrap_or_else(|| DelayMeasure::repayment(delay)),
        })
    }
}

/// The systemic event `{ min_t (Xbar_t - Xbar_0) <= D }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemicRiskQuery {
    pub default_level: f64,
}

impl SystemicRiskQuery {
    pub fn new(default_level: f64) -> Result<Self> {
        if !(default_level <= 0.0) {
            return Err(GameError::BadLevel(default_level));
        }
        Ok(SystemicRiskQuery { default_level })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure() -> GameParams {
        GameParams::new(10, 1.0, 1.0, 2.0, 0.0, 20.0, 2.0)
    }

    #[test]
    fn figure_parameters_are_valid() {
        assert!(figure().validate().is_ok());
    }

    #[test]
    fn nonconvex_rejected() {
        let mut p = figure();
        p.q = 2.0;
        assert!(matches!(p.validate(), Err(GameError::ConvexityViolated { .. })));
    }

    #[test]
    fn single_player_rejected() {
        let p = GameParams::new(1, 1.0, 1.0, 2.0, 0.0, 20.0, 2.0);
        assert_eq!(p.validate().unwrap_err(), GameError::DegenerateGame(1));
    }

    #[test]
    fn standing_condition_fails_for_small_n() {
        // q^2 (3/4)^2 = 0.5625 q^2 vs eps/2: q=1, eps=1.05 is convex but violates it
        let p = GameParams::new(2, 1.0, 1.0, 1.05, 0.0, 1.0, 0.5);
        assert!(matches!(p.validate(), Err(GameError::Condition31Violated { .. })));
    }

    #[test]
    fn bad_delay_and_nonpositive() {
        let mut p = figure();
        p.delay = -1.0;
        assert!(matches!(p.validate(), Err(GameError::BadDelay(_))));
        let mut p = figure();
        p.delay_measure = "0:+1; 3:-1".parse().unwrap();
        assert!(matches!(p.validate(), Err(GameError::BadDelay(_))));
        let mut p = figure();
        p.sigma = 0.0;
        assert!(matches!(p.validate(), Err(GameError::NonPositive { name: "sigma", .. })));
        let mut p = figure();
        p.horizon = -2.0;
        assert!(matches!(p.validate(), Err(GameError::NonPositive { name: "horizon", .. })));
    }

    #[test]
    fn nodelay_check_admits_boundary() {
        let mut p = figure();
        p.epsilon = 1.0;
        assert!(p.validate().is_err());
        assert!(p.validate_nodelay().is_ok());
    }

    #[test]
    fn parses_config_with_defaults() {
        let text = "# figure\nn_players = 3\nsigma = 1\nq = 1\nepsilon = 2\nc = 0\nhorizon = 20\ndelay = 2\ninitial_reserves = 0.5, -0.5, 0\n";
        let p = GameParams::parse_config(text).unwrap();
        assert_eq!(p.initial_reserves, vec![0.5, -0.5, 0.0]);
        assert!(p.delay_measure.is_repayment(2.0));
        assert_eq!(p.delay_measure.to_string(), "0:+1; 2:-1");
    }

    #[test]
    fn parses_general_measure_and_round_trips() {
        let text = "n_players = 4\nsigma = 0.5\nq = 0.5\nepsilon = 1\nc = 1\nhorizon = 1\ndelay = 0.5\ndelay_measure = 0:+1; 0.25:-0.5; 0.5:-0.5\n";
        let p = GameParams::parse_config(text).unwrap();
        assert_eq!(p.delay_measure.atoms.len(), 3);
        assert_eq!(p.initial_reserves, vec![0.0; 4]);
        let again = GameParams::parse_config(&p.to_config()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn config_errors_carry_line() {
        let err = GameParams::parse_config("n_players = 3\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, GameError::Config { line: 2, .. }));
        let err = GameParams::parse_config("n_players = 3\n").unwrap_err();
        assert!(matches!(err, GameError::Config { .. }));
    }

    #[test]
    fn override_moves_repayment_lag() {
        let mut p = figure();
        p.apply_override("delay", "4").unwrap();
        assert!(p.delay_measure.is_repayment(4.0));
    }

    #[test]
    fn systemic_level_sign() {
        assert!(SystemicRiskQuery::new(-0.7).is_ok());
        assert!(SystemicRiskQuery::new(0.0).is_ok());
        assert_eq!(SystemicRiskQuery::new(0.1).unwrap_err(), GameError::BadLevel(0.1));
    }
}
