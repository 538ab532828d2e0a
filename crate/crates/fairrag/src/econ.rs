//! Latency decomposition and per-query cost models.
//!
//! Both models are linear and parameterized; defaults match the fitted
//! values used throughout the experiment reports. They serve double duty:
//! predictive (what will a query cost) and annotative (stamping traces).

use serde::{Deserialize, Serialize};

use crate::domain::ModelTier;

/// End-to-end latency: t = m·N + h·C + R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Intrinsic model compute, seconds per token.
    pub m: f64,
    /// API/proxy overhead, seconds per call.
    pub h: f64,
    /// Retrieval/orchestration constant, seconds per run.
    pub r: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            m: 0.001866,
            h: 0.50,
            r: 1.0,
        }
    }
}

impl LatencyModel {
    /// Predicted end-to-end seconds for `tokens` total tokens over `calls`
    /// model calls.
    pub fn predict(&self, tokens: f64, calls: f64) -> f64 {
        self.m * tokens + self.h * calls + self.r
    }

    /// Strip the per-call and per-run overheads from a measured latency,
    /// leaving intrinsic model time.
    pub fn recover_model_time(&self, t_measured: f64, calls: f64) -> f64 {
        t_measured - self.h * calls - self.r
    }

    /// Per-token contribution of the per-call overhead at a given call
    /// density (calls per token).
    pub fn call_overhead_per_token(&self, calls: f64, tokens: f64) -> f64 {
        self.h * calls / tokens
    }

    /// Per-token contribution of the orchestration constant.
    pub fn run_overhead_per_token(&self, tokens: f64) -> f64 {
        self.r / tokens
    }
}

/// Per-million-token prices for one tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierPrice {
    pub input: f64,
    pub output: f64,
}

/// Cost model: tier prices, the input-token share, and the tier mix
/// observed under dynamic routing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub small: TierPrice,
    pub large: TierPrice,
    pub reasoner: TierPrice,
    /// Fraction of tokens consumed as input context.
    pub input_share: f64,
    /// Query mix under dynamic routing: (large, small, reasoner) weights.
    pub mix: MixWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub large: f64,
    pub small: f64,
    pub reasoner: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            small: TierPrice {
                input: 0.03,
                output: 0.06,
            },
            large: TierPrice {
                input: 0.23,
                output: 0.40,
            },
            reasoner: TierPrice {
                input: 0.70,
                output: 2.40,
            },
            input_share: 0.90,
            mix: MixWeights {
                large: 0.80,
                small: 0.15,
                reasoner: 0.05,
            },
        }
    }
}

impl CostModel {
    pub fn price(&self, tier: ModelTier) -> TierPrice {
        match tier {
            ModelTier::Small => self.small,
            ModelTier::Large => self.large,
            ModelTier::Reasoner => self.reasoner,
        }
    }

    /// Single $/Mtok rate combining input and output prices at the
    /// configured input share.
    pub fn blended_rate(&self, tier: ModelTier) -> f64 {
        let p = self.price(tier);
        self.input_share * p.input + (1.0 - self.input_share) * p.output
    }

    /// Mix-weighted blended rate across tiers.
    pub fn dynamic_rate(&self) -> f64 {
        self.mix.large * self.blended_rate(ModelTier::Large)
            + self.mix.small * self.blended_rate(ModelTier::Small)
            + self.mix.reasoner * self.blended_rate(ModelTier::Reasoner)
    }

    /// Dollars for `tokens` total tokens at `rate` $/Mtok.
    pub fn cost_per_query(tokens: f64, rate: f64) -> f64 {
        tokens * rate / 1e6
    }

    /// Cost of one call from its actual prompt/completion split, without
    /// the blended-rate approximation.
    pub fn call_cost(&self, tier: ModelTier, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        let p = self.price(tier);
        (prompt_tokens as f64 * p.input + completion_tokens as f64 * p.output) / 1e6
    }
}
