//! Flow-sensitive kill-effect tracking.
//!
//! The checker threads an [`EffectState`] through every statement sequence.
//! Applying a function releases its latent kill set into the state; every
//! subsequent use of a variable must be transitively disjoint from the
//! accumulated kills:
//!
//! ```text
//! saturate({x}) ∩ saturate(killed) = ∅
//! ```

use crate::diag::{Code, Diagnostic};
use crate::kernel::{KillSet, Qualifier};
use crate::span::Span;
use crate::types::Ctx;

#[derive(Debug, Clone)]
pub struct EffectState {
    pub killed: KillSet,
    /// Span of the call that killed each variable, for diagnostics.
    pub provenance: Vec<(String, Span)>,
    pub enabled: bool,
}

impl EffectState {
    pub fn new(enabled: bool) -> EffectState {
        EffectState { killed: KillSet::empty(), provenance: Vec::new(), enabled }
    }

    /// Release a (already substituted) kill set at `span`.
    pub fn kill(&mut self, ctx: &Ctx, k: &KillSet, span: &Span) {
        if !self.enabled {
            return;
        }
        let sat = ctx.saturate_kill(k);
        for v in &sat.vars {
            if self.killed.vars.insert(v.clone()) {
                self.provenance.push((v.clone(), span.clone()));
            }
        }
        self.killed.fun |= sat.fun;
    }

    pub fn killed_span(&self, var: &str) -> Option<&Span> {
        self.provenance.iter().find(|(v, _)| v == var).map(|(_, s)| s)
    }

    /// Is `x` (transitively) dead? Returns the offending killed variable and
    /// the saturation edges that reached it.
    pub fn dead_witness(&self, ctx: &Ctx, x: &str) -> Option<(String, Vec<(String, String)>)> {
        if !self.enabled {
            return None;
        }
        let (sat, edges) = ctx.saturate_trace(&Qualifier::var(x));
        let hit = sat.vars.iter().find(|v| self.killed.vars.contains(*v))?;
        Some((hit.clone(), edges))
    }

    /// Check a variable use; build an E_KILLED_USE diagnostic with the
    /// saturation witness chain if it is dead.
    pub fn check_use(&self, ctx: &Ctx, x: &str, span: &Span) -> Result<(), Diagnostic> {
        let Some((hit, edges)) = self.dead_witness(ctx, x) else {
            return Ok(());
        };
        // Compiler-introduced binders (`$sigma3_imp`, ...) mean nothing to the
        // user; describe them as the implicit witness they are.
        let show = |v: &str| {
            if v.starts_with('$') {
                "the current capability witness".to_string()
            } else {
                format!("`{v}`")
            }
        };
        let mut d = Diagnostic::new(
            Code::E_KILLED_USE,
            span.clone(),
            if hit == x && x.starts_with('$') {
                "the capability witness required here was already consumed".to_string()
            } else if hit == x {
                format!("{} is used after its capability was consumed", show(x))
            } else {
                format!("{} is used after {}, which it reaches, was consumed", show(x), show(&hit))
            },
        );
        // Witness chain: walk edges backwards from the hit to x.
        let mut chain = vec![hit.clone()];
        let mut cur = hit.clone();
        while cur != x {
            let Some((from, _)) = edges.iter().find(|(_, to)| *to == cur) else { break };
            chain.push(from.clone());
            cur = from.clone();
        }
        chain.reverse();
        if chain.len() > 1 {
            d = d.with_note(
                span.clone(),
                format!("reachability witness: {}", chain.join(" -> ")),
            );
        }
        if let Some(ks) = self.killed_span(&hit) {
            d = d.with_note(ks.clone(), format!("{} was consumed here", show(&hit)));
        }
        Err(d)
    }

    /// Join of two branches: a capability dead on either side is dead after.
    pub fn join(&mut self, other: EffectState) {
        for v in other.killed.vars {
            if self.killed.vars.insert(v.clone()) {
                if let Some((_, s)) = other.provenance.iter().find(|(w, _)| *w == v) {
                    self.provenance.push((v, s.clone()));
                }
            }
        }
        self.killed.fun |= other.killed.fun;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KType, QType};
    use std::sync::Arc;

    fn sp() -> Span {
        Span::point(Arc::from("t"), 1, 1)
    }

    fn file(q: Qualifier) -> QType {
        QType { ty: KType::named("File"), qual: q }
    }

    #[test]
    fn transitive_kill_blocks_aliases() {
        // fA: File^; fB: File^{fA}; fC: File^{fA}. Killing fA kills both.
        let mut ctx = Ctx::new();
        ctx.bind("fA", file(Qualifier::fresh()), false, sp());
        ctx.bind("fB", file(Qualifier::var("fA")), false, sp());
        ctx.bind("fC", file(Qualifier::var("fA")), false, sp());
        let mut st = EffectState::new(true);
        st.kill(&ctx, &KillSet::var("fA"), &sp());
        assert!(st.check_use(&ctx, "fB", &sp()).is_err());
        assert!(st.check_use(&ctx, "fC", &sp()).is_err());
    }

    #[test]
    fn kill_saturates_at_release_time() {
        // Killing fB (which reaches fA) also kills fA and thus fC.
        let mut ctx = Ctx::new();
        ctx.bind("fA", file(Qualifier::fresh()), false, sp());
        ctx.bind("fB", file(Qualifier::var("fA")), false, sp());
        ctx.bind("fC", file(Qualifier::var("fA")), false, sp());
        let mut st = EffectState::new(true);
        st.kill(&ctx, &KillSet::var("fB"), &sp());
        assert!(st.killed.vars.contains("fA"));
        let err = st.check_use(&ctx, "fC", &sp()).unwrap_err();
        assert_eq!(err.code, Code::E_KILLED_USE);
        assert!(err.message.contains("fA"));
    }

    #[test]
    fn disjoint_vars_unaffected() {
        let mut ctx = Ctx::new();
        ctx.bind("f", file(Qualifier::fresh()), false, sp());
        ctx.bind("g", file(Qualifier::fresh()), false, sp());
        let mut st = EffectState::new(true);
        st.kill(&ctx, &KillSet::var("f"), &sp());
        assert!(st.check_use(&ctx, "g", &sp()).is_ok());
    }

    #[test]
    fn branch_join_is_union() {
        let ctx = Ctx::new();
        let mut a = EffectState::new(true);
        let mut b = a.clone();
        a.kill(&ctx, &KillSet::var("x"), &sp());
        b.kill(&ctx, &KillSet::var("y"), &sp());
        a.join(b);
        assert!(a.killed.vars.contains("x") && a.killed.vars.contains("y"));
    }

    #[test]
    fn disabled_state_never_reports() {
        let mut ctx = Ctx::new();
        ctx.bind("f", file(Qualifier::fresh()), false, sp());
        let mut st = EffectState::new(false);
        st.kill(&ctx, &KillSet::var("f"), &sp());
        assert!(st.check_use(&ctx, "f", &sp()).is_ok());
    }

    #[test]
    fn witness_chain_reported() {
        let mut ctx = Ctx::new();
        ctx.bind("a", file(Qualifier::fresh()), false, sp());
        ctx.bind("b", file(Qualifier::var("a")), false, sp());
        ctx.bind("c", file(Qualifier::var("b")), false, sp());
        let mut st = EffectState::new(true);
        st.kill(&ctx, &KillSet::var("a"), &sp());
        let err = st.check_use(&ctx, "c", &sp()).unwrap_err();
        let note = &err.related[0].1;
        assert!(note.contains("c -> b -> a"), "note: {note}");
    }
}
