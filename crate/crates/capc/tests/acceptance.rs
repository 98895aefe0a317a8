//! End-to-end acceptance gate. Each criterion prints exactly one PASS/FAIL
//! line; run with `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capc::diag::Code;
use capc::interp::{self, RtError};
use capc::kernel::{KType, QType, Qualifier};
use capc::pipeline::{self, DriverConfig};
use capc::span::Span;
use capc::typer::{Options, Typer};
use capc::types::{Ctx, Globals};
use capc::{anf, corpus, desugar, fuzz};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn report(criterion: &str, passed: bool, detail: String) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("{verdict} {criterion}: {detail}");
    assert!(passed, "{criterion}: {detail}");
}

#[test]
fn criterion_1_golden_corpus() {
    let t0 = Instant::now();
    let results = corpus::run_dir(&corpus_dir(), false);
    let elapsed = t0.elapsed();
    let failures: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.path.display(), r.details))
        .collect();
    let ok = !results.is_empty() && failures.is_empty() && elapsed.as_secs() < 30;
    report(
        "criterion 1 (golden corpus)",
        ok,
        if failures.is_empty() {
            format!("{} cases in {:.1}s", results.len(), elapsed.as_secs_f64())
        } else {
            failures.join("; ")
        },
    );
}

/// The corpus must actually contain the canonical scenarios, not just pass.
#[test]
fn corpus_covers_required_scenarios() {
    let required = [
        "files/leak_return.cap",
        "files/leak_throw.cap",
        "files/leak_global.cap",
        "files/leak_closure.cap",
        "files/leak_summon.cap",
        "files/read_without_open.cap",
        "files/stale_write.cap",
        "files/alias_kill.cap",
        "files/alias_unaffected.cap",
        "files/with_file.cap",
        "files/ensure_closed.cap",
        "files/ensure_missing_close.cap",
        "files/cross_file.cap",
        "files/sigma_open.cap",
        "locks/hand_over_hand.cap",
        "locks/query_after_unlock.cap",
        "dom/balanced_page.cap",
        "dom/table_rows.cap",
        "dom/double_close.cap",
        "dom/wrong_close.cap",
        "sessions/echo.cap",
        "sessions/endpoint_reuse.cap",
        "sessions/stuck_dual.cap",
        "misc/ambiguous_implicits.cap",
    ];
    let dir = corpus_dir();
    let missing: Vec<&str> =
        required.iter().copied().filter(|r| !dir.join(r).is_file()).collect();
    assert!(missing.is_empty(), "missing corpus scenarios: {missing:?}");
}

#[test]
fn criterion_2_differential_fuzz() {
    let t0 = Instant::now();
    let cfg = DriverConfig::default();
    let relaxed = DriverConfig { no_effect_check: true, ..Default::default() };
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut justified = 0usize;
    let mut problems: Vec<String> = Vec::new();

    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = fuzz::gen_program(&mut rng, 6);
        match pipeline::check_source("gen.cap", &src, &cfg) {
            Ok(k) => {
                accepted += 1;
                match interp::run_program(&k, None) {
                    Ok(_) => {}
                    Err(RtError::Guard(m)) => {
                        problems.push(format!("seed {seed}: accepted but guarded: {m}"));
                    }
                    Err(e) => problems.push(format!(
                        "seed {seed}: accepted but failed: {}",
                        e.message()
                    )),
                }
            }
            Err(diags) => {
                rejected += 1;
                let killed: Vec<_> =
                    diags.iter().filter(|d| d.code == Code::E_KILLED_USE).collect();
                if killed.is_empty() {
                    problems.push(format!(
                        "seed {seed}: rejected without E_KILLED_USE: {:?}",
                        diags.iter().map(|d| d.code).collect::<Vec<_>>()
                    ));
                    continue;
                }
                // A rejection is justified if disabling the effect check lets
                // the program run into a real runtime guard, or if the
                // diagnostic carries a reachability witness (a conservative
                // alias kill).
                let by_guard = match pipeline::run_source("gen.cap", &src, &relaxed) {
                    Ok(Err(RtError::Guard(_))) => true,
                    _ => false,
                };
                let by_witness = killed.iter().any(|d| !d.related.is_empty());
                if by_guard || by_witness {
                    justified += 1;
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    let ratio = if rejected == 0 { 1.0 } else { justified as f64 / rejected as f64 };
    let ok = problems.is_empty() && ratio >= 0.95 && elapsed.as_secs() < 60;
    report(
        "criterion 2 (differential fuzz)",
        ok,
        if problems.is_empty() {
            format!(
                "1000 programs ({accepted} accepted, {rejected} rejected, \
                 {:.1}% justified) in {:.1}s",
                ratio * 100.0,
                elapsed.as_secs_f64()
            )
        } else {
            problems.truncate(5);
            problems.join("; ")
        },
    );
}

fn random_qual(rng: &mut impl Rng, vars: &[String]) -> Qualifier {
    let mut q = Qualifier::default();
    for v in vars {
        if rng.gen_bool(0.4) {
            q.vars.insert(v.clone());
        }
    }
    q.fresh = rng.gen_bool(0.15);
    q
}

/// Independent reachability oracle: BFS over declared qualifiers.
fn closure(ctx: &Ctx, q: &Qualifier) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = q.vars.clone();
    let mut work: Vec<String> = q.vars.iter().cloned().collect();
    while let Some(x) = work.pop() {
        if let Some(b) = ctx.entries.iter().rev().find(|b| b.name == x) {
            for y in &b.ty.qual.vars {
                if out.insert(y.clone()) {
                    work.push(y.clone());
                }
            }
        }
    }
    out
}

#[test]
fn criterion_3_qualifier_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checks = 0usize;
    for _case in 0..500 {
        // Random context: each var's declared qualifier reaches a random
        // subset of the earlier ones.
        let mut ctx = Ctx::new();
        ctx.push_scope();
        let n = rng.gen_range(1..=6);
        let mut names: Vec<String> = Vec::new();
        for i in 0..n {
            let name = format!("v{i}");
            let q = random_qual(&mut rng, &names);
            let ty = QType {
                ty: KType::Named { name: "File".into(), args: vec![] },
                qual: Qualifier { fresh: false, ..q },
            };
            ctx.bind(name.clone(), ty, false, Span::point("t".into(), 1, 1));
            names.push(name);
        }
        let a = random_qual(&mut rng, &names);
        let b = random_qual(&mut rng, &names);
        let c = random_qual(&mut rng, &names);

        // Saturation is extensive, idempotent, and monotone.
        let sa = ctx.saturate(&a);
        assert!(a.vars.is_subset(&sa.vars), "saturation must be extensive");
        assert_eq!(ctx.saturate(&sa), sa, "saturation must be idempotent");
        assert_eq!(sa.vars, closure(&ctx, &a), "saturation matches the BFS oracle");
        let mut widened = a.clone();
        widened.vars.extend(b.vars.iter().cloned());
        assert!(
            sa.vars.is_subset(&ctx.saturate(&widened).vars),
            "saturation must be monotone"
        );

        // Subqualification laws.
        assert!(ctx.subqual(&a, &a), "subqual must be reflexive");
        assert!(ctx.subqual(&a, &sa), "a qualifier flows into its saturation");
        let fresh = Qualifier { fresh: true, ..Qualifier::default() };
        assert!(ctx.subqual(&a, &fresh), "fresh on the right absorbs anything");
        if !a.fresh && !b.fresh && !c.fresh {
            if ctx.subqual(&a, &b) && ctx.subqual(&b, &c) {
                assert!(ctx.subqual(&a, &c), "subqual must be transitive");
            }
        }
        if a.fresh && !b.fresh {
            assert!(!ctx.subqual(&a, &b), "fresh cannot hide in a ground qualifier");
        }
        checks += 1;
    }
    report("criterion 3 (qualifier algebra)", checks == 500, format!("{checks} random contexts"));
}

fn session_globals() -> (Globals, capc::kernel::KProgram) {
    let k = pipeline::check_source("s.cap", "//> use chan\n", &DriverConfig::default())
        .expect("chan prelude checks");
    (Globals::from_program(&k), k)
}

fn named(name: &str, args: Vec<KType>) -> KType {
    KType::Named { name: name.into(), args: args.into_iter().map(QType::plain).collect() }
}

fn session_leaves() -> Vec<KType> {
    vec![named("End", vec![]), named("Var", vec![KType::Nat(0)]), named("Var", vec![KType::Nat(1)])]
}

/// All session terms of depth `<= d`. With `binary` the Select/Branch
/// constructors are included (the count is then quadratic per level).
fn sessions_of_depth(d: usize, binary: bool) -> Vec<KType> {
    if d == 0 {
        return session_leaves();
    }
    let inner = sessions_of_depth(d - 1, binary);
    let int = KType::Prim(capc::kernel::PrimTy::Int);
    let mut out = session_leaves();
    for s in &inner {
        out.push(named("Send", vec![int.clone(), s.clone()]));
        out.push(named("Recv", vec![int.clone(), s.clone()]));
        out.push(named("Rec", vec![s.clone()]));
    }
    if binary {
        for s in &inner {
            for t in &inner {
                out.push(named("Select", vec![s.clone(), t.clone()]));
                out.push(named("Branch", vec![s.clone(), t.clone()]));
            }
        }
    }
    out
}

fn random_session(rng: &mut impl Rng, depth: usize) -> KType {
    if depth == 0 {
        let leaves = session_leaves();
        return leaves[rng.gen_range(0..leaves.len())].clone();
    }
    let int = KType::Prim(capc::kernel::PrimTy::Int);
    match rng.gen_range(0..8) {
        0 => named("End", vec![]),
        1 => named("Var", vec![KType::Nat(rng.gen_range(0..2))]),
        2 => named("Send", vec![int, random_session(rng, depth - 1)]),
        3 => named("Recv", vec![int, random_session(rng, depth - 1)]),
        4 => named("Rec", vec![random_session(rng, depth - 1)]),
        5 => named("Select", vec![random_session(rng, depth - 1), random_session(rng, depth - 1)]),
        _ => named("Branch", vec![random_session(rng, depth - 1), random_session(rng, depth - 1)]),
    }
}

/// Independent oracle: structurally swap Send/Recv and Select/Branch.
fn swap(t: &KType) -> KType {
    let KType::Named { name, args } = t else { return t.clone() };
    let rec = |i: usize| QType::plain(swap(&args[i].ty));
    match name.as_str() {
        "Send" => KType::Named { name: "Recv".into(), args: vec![args[0].clone(), rec(1)] },
        "Recv" => KType::Named { name: "Send".into(), args: vec![args[0].clone(), rec(1)] },
        "Select" => KType::Named { name: "Branch".into(), args: vec![rec(0), rec(1)] },
        "Branch" => KType::Named { name: "Select".into(), args: vec![rec(0), rec(1)] },
        "Rec" => KType::Named { name: "Rec".into(), args: vec![rec(0)] },
        _ => t.clone(),
    }
}

#[test]
fn criterion_4_dual_involution() {
    // Exhaustive over the unary fragment to depth 4 and over the full
    // alphabet (with the quadratic Select/Branch constructors) to depth 2,
    // plus 10_000 random full-alphabet terms of depth <= 4. A fully
    // exhaustive depth-4 enumeration with binary constructors has over 10^13
    // terms, so this is the densest coverage that fits the time budget.
    let t0 = Instant::now();
    let (g, _k) = session_globals();
    let mut terms = sessions_of_depth(4, false);
    terms.extend(sessions_of_depth(2, true));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        terms.push(random_session(&mut rng, 4));
    }
    let mut checked = 0usize;
    for s in &terms {
        let dual = |t: &KType| {
            let app = QType::plain(KType::TypeFun {
                name: "Dual".into(),
                args: vec![QType::plain(t.clone())],
            });
            g.normalize(&app).expect("Dual reduces on well-formed sessions").ty
        };
        let d1 = dual(s);
        assert_eq!(d1, swap(s), "Dual disagrees with the structural oracle on {s}");
        assert_eq!(dual(&d1), *s, "Dual is not an involution on {s}");
        checked += 1;
    }
    let elapsed = t0.elapsed();
    report(
        "criterion 4 (Dual involution)",
        checked == terms.len() && elapsed.as_secs() < 10,
        format!("{checked} session terms in {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_5_anf_preserves_behavior() {
    // Normalization must not change runtime behavior (value and trace), and
    // must be idempotent. Checked on fuzz-accepted programs (these never rely
    // on the Sigma-opening sugar, so the pre-ANF kernel runs as-is) and on
    // every corpus program for idempotence.
    let cfg = DriverConfig::default();
    let mut compared = 0usize;
    let mut seed = 0u64;
    while compared < 100 {
        let src = fuzz::gen_program(&mut ChaCha8Rng::seed_from_u64(10_000 + seed), 6);
        seed += 1;
        let Ok(_) = pipeline::check_source("gen.cap", &src, &cfg) else { continue };
        let surface = pipeline::expand_program("gen.cap", &src).unwrap();
        let k = desugar::desugar_program(&surface).unwrap();
        let a = anf::anf_program(&k);
        let pre = interp::run_program(&k, None).expect("pre-ANF run");
        let post = interp::run_program(&a, None).expect("post-ANF run");
        assert_eq!(pre.value.to_string(), post.value.to_string(), "{src}");
        assert_eq!(pre.trace, post.trace, "{src}");
        assert_eq!(anf::anf_program(&a), a, "ANF must be idempotent\n{src}");
        compared += 1;
    }

    let mut idem = 0usize;
    for r in corpus::run_dir(&corpus_dir(), false) {
        let src = std::fs::read_to_string(&r.path).unwrap();
        let name = r.path.file_name().unwrap().to_str().unwrap();
        let Ok(surface) = pipeline::expand_program(name, &src) else { continue };
        let Ok(k) = desugar::desugar_program(&surface) else { continue };
        let a = anf::anf_program(&k);
        assert_eq!(anf::anf_program(&a), a, "ANF not idempotent on {}", r.path.display());
        idem += 1;
    }
    report(
        "criterion 5 (ANF equivalence)",
        compared == 100 && idem > 0,
        format!("{compared} trace comparisons, idempotence on {idem} corpus programs"),
    );
}

#[test]
fn criterion_6_implicit_resolution_determinism() {
    // One live candidate per scope depth; the innermost must win no matter
    // how the surrounding (non-candidate) bindings are permuted.
    let prog = capc::kernel::KProgram::default();
    let g = Globals::from_program(&prog);
    let opts = Options { scala_compat: false, no_effect_check: false };
    let span = Span::point("t".into(), 1, 1);
    let target = QType::plain(KType::PathMember {
        path: vec!["f".into()],
        member: "IsOpen".into(),
        args: vec![],
    });
    let cap_ty = || target.clone();
    let noise_ty = || QType::plain(KType::Prim(capc::kernel::PrimTy::Str));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut runs = 0usize;
    for _ in 0..200 {
        let mut typer = Typer::new(&g, &prog, &opts);
        typer.ctx.push_scope();
        typer.ctx.bind("f", QType::plain(KType::Named { name: "File".into(), args: vec![] }), false, span.clone());
        let depths = rng.gen_range(1..=4);
        for d in 0..depths {
            typer.ctx.push_scope();
            // Random permutation of one candidate among noise bindings.
            let slot = rng.gen_range(0..4);
            for i in 0..4 {
                if i == slot {
                    typer.ctx.bind(format!("cap{d}"), cap_ty(), true, span.clone());
                } else {
                    typer.ctx.bind(format!("x{d}_{i}"), noise_ty(), rng.gen(), span.clone());
                }
            }
        }
        let (name, _) = typer.resolve_implicit(&target, &span).expect("resolution succeeds");
        assert_eq!(name, format!("cap{}", depths - 1), "innermost candidate must win");
        runs += 1;
    }
    report("criterion 6 (implicit determinism)", runs == 200, format!("{runs} permutations"));
}

#[test]
fn criterion_7_mode_divergence() {
    // With killed-candidate filtering (default), the stale c1 is skipped and
    // the program is fine; in --scala-compat both candidates stay visible and
    // resolution is ambiguous.
    let src = r#"
//> use core
//> use file

def main(): Str = {
  val f = mkFile("a.txt")
  implicit val c1 = openFile(f)
  closeFile(f)
  implicit val c2 = openFile(f)
  readAll(f)
}
"#;
    let default_ok = pipeline::check_source("m.cap", src, &DriverConfig::default()).is_ok();
    let compat = pipeline::check_source(
        "m.cap",
        src,
        &DriverConfig { scala_compat: true, ..Default::default() },
    );
    let compat_ambiguous = matches!(
        &compat,
        Err(diags) if diags.iter().any(|d| d.code == Code::E_AMBIGUOUS_IMPLICIT)
    );
    let runs = pipeline::run_source("m.cap", src, &DriverConfig::default())
        .expect("checks")
        .is_ok();
    report(
        "criterion 7 (mode divergence)",
        default_ok && compat_ambiguous && runs,
        format!("default clean & runs: {}, scala-compat ambiguous: {compat_ambiguous}", default_ok && runs),
    );
}
