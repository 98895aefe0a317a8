//! Random program generator for differential testing of the flat file API.
//!
//! Generated programs follow the shape-level protocol (only open handles are
//! read, written, or closed; only closed handles are opened) but deliberately
//! keep consumed handles in the candidate pools, so stale reuse and
//! `if`-aliasing show up often. A program the checker accepts must therefore
//! never trip a runtime guard, while a rejection for killed-handle use should
//! correspond to a real guard (or an alias that conservatively dies).

use rand::Rng;

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    /// mkFile/closeNaive result: the underlying file is closed at birth.
    Closed,
    /// openNaive result: the underlying file is open at birth.
    Open,
}

/// Generate one program: at most `max_calls` file-API calls over at most
/// three distinct files, with optional `if`-aliasing of handles.
pub fn gen_program(rng: &mut impl Rng, max_calls: usize) -> String {
    let mut body = String::new();
    let mut vars: Vec<(String, Kind)> = Vec::new();
    let mut next = 0usize;
    let mut files = 0usize;
    let mut calls = 0usize;
    let budget = rng.gen_range(1..=max_calls);

    let fresh = |prefix: &str, next: &mut usize| {
        let n = format!("{prefix}{next}");
        *next += 1;
        n
    };

    while calls < budget {
        let closed: Vec<String> =
            vars.iter().filter(|(_, k)| *k == Kind::Closed).map(|(n, _)| n.clone()).collect();
        let open: Vec<String> =
            vars.iter().filter(|(_, k)| *k == Kind::Open).map(|(n, _)| n.clone()).collect();

        // Weighted choice among the ops that are possible right now.
        let mut ops: Vec<u8> = Vec::new();
        if files < 3 {
            ops.extend_from_slice(&[0, 0]);
        }
        if !closed.is_empty() {
            ops.extend_from_slice(&[1, 1, 1]);
        }
        if !open.is_empty() {
            ops.extend_from_slice(&[2, 3, 3, 4]);
        }
        if closed.len() >= 2 || open.len() >= 2 {
            ops.push(5);
        }
        let op = ops[rng.gen_range(0..ops.len())];
        match op {
            0 => {
                let v = fresh("f", &mut next);
                body.push_str(&format!("  val {v} = mkFile(\"data{files}.txt\")\n"));
                vars.push((v, Kind::Closed));
                files += 1;
                calls += 1;
            }
            1 => {
                let src = &closed[rng.gen_range(0..closed.len())];
                let v = fresh("o", &mut next);
                body.push_str(&format!("  val {v} = openNaive({src})\n"));
                vars.push((v, Kind::Open));
                calls += 1;
            }
            2 => {
                let src = &open[rng.gen_range(0..open.len())];
                let v = fresh("c", &mut next);
                body.push_str(&format!("  val {v} = closeNaive({src})\n"));
                vars.push((v, Kind::Closed));
                calls += 1;
            }
            3 => {
                let src = &open[rng.gen_range(0..open.len())];
                body.push_str(&format!("  writeNaive({src}, \"x\")\n"));
                calls += 1;
            }
            4 => {
                let src = &open[rng.gen_range(0..open.len())];
                let v = fresh("s", &mut next);
                body.push_str(&format!("  val {v} = readNaive({src})\n"));
                calls += 1;
            }
            _ => {
                // Alias two same-kind handles behind a condition the checker
                // cannot see through (but whose runtime value we control).
                let (pool, kind) = if closed.len() >= 2 && (open.len() < 2 || rng.gen()) {
                    (&closed, Kind::Closed)
                } else {
                    (&open, Kind::Open)
                };
                let i = rng.gen_range(0..pool.len());
                let mut j = rng.gen_range(0..pool.len() - 1);
                if j >= i {
                    j += 1;
                }
                let lit = if rng.gen() { "\"y\"" } else { "\"n\"" };
                let v = fresh("a", &mut next);
                body.push_str(&format!(
                    "  val {v} = if (strEq({lit}, \"y\")) {} else {}\n",
                    pool[i], pool[j]
                ));
                vars.push((v, kind));
            }
        }
    }

    format!("//> use core\n//> use file\n\ndef main(): Unit = {{\n{body}  ()\n}}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_programs_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let src = gen_program(&mut rng, 6);
            crate::syntax::parse_program("gen.cap", &src)
                .unwrap_or_else(|e| panic!("{e:?}\n{src}"));
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = gen_program(&mut ChaCha8Rng::seed_from_u64(42), 6);
        let b = gen_program(&mut ChaCha8Rng::seed_from_u64(42), 6);
        assert_eq!(a, b);
    }
}
