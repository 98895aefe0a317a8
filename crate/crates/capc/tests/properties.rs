//! Randomized invariants for the front end and the qualifier algebra.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use capc::kernel::{KType, QType, Qualifier};
use capc::pipeline::{self, DriverConfig};
use capc::span::Span;
use capc::types::Ctx;
use capc::{anf, desugar, fuzz, syntax};

fn ctx_from_edges(n: usize, edges: &[(usize, usize)]) -> Ctx {
    let mut ctx = Ctx::new();
    ctx.push_scope();
    for i in 0..n {
        let mut q = Qualifier::default();
        for (from, to) in edges {
            // Only earlier bindings are nameable, mirroring real contexts.
            if *from == i && *to < i {
                q.vars.insert(format!("v{to}"));
            }
        }
        let ty = QType { ty: KType::Named { name: "File".into(), args: vec![] }, qual: q };
        ctx.bind(format!("v{i}"), ty, false, Span::point("t".into(), 1, 1));
    }
    ctx
}

fn qual_of(vars: &[usize], n: usize) -> Qualifier {
    let mut q = Qualifier::default();
    for v in vars {
        q.vars.insert(format!("v{}", v % n.max(1)));
    }
    q
}

proptest! {
    /// Saturation is a closure operator: extensive, idempotent, monotone.
    #[test]
    fn saturate_is_a_closure_operator(
        n in 1usize..12,
        edges in proptest::collection::vec((0usize..12, 0usize..12), 0..24),
        qa in proptest::collection::vec(0usize..12, 0..6),
        qb in proptest::collection::vec(0usize..12, 0..6),
    ) {
        let ctx = ctx_from_edges(n, &edges);
        let a = qual_of(&qa, n);
        let b = qual_of(&qb, n);
        let sa = ctx.saturate(&a);
        prop_assert!(a.vars.is_subset(&sa.vars));
        prop_assert_eq!(ctx.saturate(&sa), sa.clone());
        let mut ab = a.clone();
        ab.vars.extend(b.vars.iter().cloned());
        prop_assert!(sa.vars.is_subset(&ctx.saturate(&ab).vars));
    }

    /// Subqualification is a preorder and respects saturation.
    #[test]
    fn subqual_is_a_preorder(
        n in 1usize..12,
        edges in proptest::collection::vec((0usize..12, 0usize..12), 0..24),
        qa in proptest::collection::vec(0usize..12, 0..6),
        qb in proptest::collection::vec(0usize..12, 0..6),
        qc in proptest::collection::vec(0usize..12, 0..6),
    ) {
        let ctx = ctx_from_edges(n, &edges);
        let a = qual_of(&qa, n);
        let b = qual_of(&qb, n);
        let c = qual_of(&qc, n);
        prop_assert!(ctx.subqual(&a, &a));
        prop_assert!(ctx.subqual(&a, &ctx.saturate(&a)));
        if ctx.subqual(&a, &b) && ctx.subqual(&b, &c) {
            prop_assert!(ctx.subqual(&a, &c));
        }
    }

    /// The parser returns a value or a diagnostic; it never panics, and it is
    /// deterministic.
    #[test]
    fn parser_is_total_and_deterministic(src in "[ -~\n]{0,200}") {
        let a = syntax::parse_program("p.cap", &src);
        let b = syntax::parse_program("p.cap", &src);
        match (a, b) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(x), Err(y)) => {
                prop_assert_eq!(x.code, y.code);
                prop_assert_eq!(x.span, y.span);
            }
            _ => prop_assert!(false, "parse result not deterministic"),
        }
    }

    /// ANF is idempotent on generated programs, and checking is deterministic.
    #[test]
    fn anf_idempotent_and_check_deterministic(seed in 0u64..5_000) {
        let src = fuzz::gen_program(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let surface = pipeline::expand_program("g.cap", &src).unwrap();
        let k = desugar::desugar_program(&surface).unwrap();
        let a = anf::anf_program(&k);
        prop_assert_eq!(anf::anf_program(&a), a);

        let cfg = DriverConfig::default();
        let r1 = pipeline::check_source("g.cap", &src, &cfg).map_err(|d| {
            d.iter().map(|x| (x.code, x.span.start_line)).collect::<Vec<_>>()
        });
        let r2 = pipeline::check_source("g.cap", &src, &cfg).map_err(|d| {
            d.iter().map(|x| (x.code, x.span.start_line)).collect::<Vec<_>>()
        });
        prop_assert_eq!(r1.is_ok(), r2.is_ok());
        if let (Err(e1), Err(e2)) = (r1, r2) {
            prop_assert_eq!(e1, e2);
        }
    }

    /// Every diagnostic for a generated program points into the user file.
    #[test]
    fn diagnostic_spans_point_into_the_source(seed in 0u64..2_000) {
        let src = fuzz::gen_program(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let lines = src.lines().count() as u32;
        if let Err(diags) = pipeline::check_source("g.cap", &src, &DriverConfig::default()) {
            for d in diags {
                prop_assert_eq!(d.span.file.as_ref(), "g.cap");
                prop_assert!(d.span.start_line >= 1 && d.span.start_line <= lines);
            }
        }
    }
}

#[test]
fn diagnostic_codes_round_trip() {
    for c in capc::diag::Code::ALL {
        assert_eq!(capc::diag::Code::parse(c.as_str()), Some(c));
    }
}
