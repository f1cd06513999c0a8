use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpet_core::caf::{DefectCounts, Pattern};
use tpet_core::dsl::{mutate_ast, parse_text, render, MutationKind, MutationParams, PolicyProgram, PolicySource, Signature};
use tpet_core::evolution::{MutationEngine, PromptState, Proposal};

/// Edit attempts per candidate before the parent is kept unchanged.
const ATTEMPTS: usize = 8;

/// Offline engine: mutates prompt elites with seeded AST edits.
///
/// Reads defect counts from the elite critiques and leans toward the edits
/// that address them: starvation makes rule insertion likelier and biases it
/// toward the starvation template, wasted green makes threshold edits
/// likelier. Output depends only on `(seed, prompt)`.
pub struct MockEngine {
    seed: u64,
    signature: Signature,
    params: MutationParams,
}

impl MockEngine {
    pub fn new(seed: u64, signature: Signature) -> Self {
        Self::with_params(seed, signature, MutationParams::default())
    }

    pub fn with_params(seed: u64, signature: Signature, params: MutationParams) -> Self {
        Self {
            seed,
            signature,
            params,
        }
    }

    fn weights(&self, counts: &DefectCounts) -> ([u32; 6], MutationParams) {
        let mut params = self.params.clone();
        // Order follows MutationKind::ALL.
        let mut w = [3, 3, 1, 1, 1, 1];
        if counts.starvation > 0 {
            w[1] += 4;
            params.starvation_bias = params.starvation_bias.max(0.6);
        }
        if counts.wasted_green > 0 {
            w[0] += 4;
        }
        if counts.premature_switch > 0 {
            w[4] += 1;
        }
        (w, params)
    }
}

/// Defect counts summed over the `- <pattern>: <n>` lines of a rendered critique.
pub fn critique_counts(critique: &str) -> DefectCounts {
    let mut c = DefectCounts::default();
    for line in critique.lines() {
        let Some(rest) = line.trim().strip_prefix("- ") else {
            continue;
        };
        for p in Pattern::ALL {
            let Some(tail) = rest.strip_prefix(p.name()).and_then(|t| t.strip_prefix(':')) else {
                continue;
            };
            let Some(n) = tail.split_whitespace().next().and_then(|t| t.parse::<usize>().ok()) else {
                continue;
            };
            match p {
                Pattern::WastedGreenTime => c.wasted_green += n,
                Pattern::PhaseStarvation => c.starvation += n,
                Pattern::PrematurePhaseSwitch => c.premature_switch += n,
            }
        }
    }
    c
}

fn prompt_hash(prompt: &PromptState) -> u64 {
    let mut h = DefaultHasher::new();
    prompt.render().hash(&mut h);
    h.finish()
}

fn pick(rng: &mut impl Rng, weights: &[u32; 6]) -> MutationKind {
    let total: u32 = weights.iter().sum();
    let mut x = rng.random_range(0..total);
    for (k, w) in weights.iter().enumerate() {
        if x < *w {
            return MutationKind::ALL[k];
        }
        x -= w;
    }
    MutationKind::ALL[0]
}

impl MutationEngine for MockEngine {
    fn propose(&mut self, prompt: &PromptState, n: usize) -> Proposal {
        if n == 0 {
            return Proposal::ok(Vec::new());
        }
        let mut parents: Vec<(Option<String>, PolicyProgram)> = prompt
            .elites
            .iter()
            .filter_map(|e| {
                parse_text(&e.source, &self.signature)
                    .ok()
                    .map(|p| (Some(e.id.clone()), p))
            })
            .collect();
        if parents.is_empty() {
            parents.push((None, PolicyProgram::max_pressure()));
        }
        let mut counts = DefectCounts::default();
        for e in &prompt.elites {
            let c = critique_counts(&e.critique);
            counts.wasted_green += c.wasted_green;
            counts.starvation += c.starvation;
            counts.premature_switch += c.premature_switch;
        }
        let (weights, params) = self.weights(&counts);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ prompt_hash(prompt));

        let sources = (0..n)
            .map(|_| {
                // Elites arrive best first; the min of two draws favours them.
                let len = parents.len();
                let k = rng.random_range(0..len).min(rng.random_range(0..len));
                let (parent, mut program) = parents[k].clone();
                let edits = if rng.random_bool(0.35) { 2 } else { 1 };
                for _ in 0..edits {
                    for _ in 0..ATTEMPTS {
                        let kind = pick(&mut rng, &weights);
                        if let Some(p) = mutate_ast(&program, &self.signature, rng.random(), kind, &params).applied() {
                            program = p;
                            break;
                        }
                    }
                }
                PolicySource {
                    text: render(&program),
                    parent,
                    ..PolicySource::default()
                }
            })
            .collect();
        Proposal::ok(sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_from_rendered_lines() {
        let text = "FITNESS ATT 61.20 s\nDEFECTS (120 decisions analyzed)\n- Wasted Green Time: 2 (40 s of green on empty phases)\n- Phase Starvation: 3 (worst 240 s)\n- Premature Phase Switch: 0\nDIRECTIVES\n- Phase Starvation: add a rule\n";
        let c = critique_counts(text);
        assert_eq!((c.wasted_green, c.starvation, c.premature_switch), (2, 3, 0));
        assert_eq!(critique_counts("No defects matched across 120 decisions.").total(), 0);
    }
}
