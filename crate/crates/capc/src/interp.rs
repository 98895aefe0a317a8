//! Tree-walking evaluator for the kernel IR.
//!
//! Capabilities are erased: implicit parameters are auto-filled with `Unit`
//! at application time, and `summon` evaluates to `Unit`. All resource state
//! lives in a deterministic [`World`]; every primitive call appends one line
//! to the world's trace, which is what golden tests digest.
//!
//! Concurrency is cooperative: `task.spawn` queues a thunk, and a blocking
//! `chan.recv` runs queued tasks until a message arrives or nothing can make
//! progress (a deadlock).

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::kernel::*;

const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
    Str(String),
    /// Handle to a world resource (file, lock, DOM node, channel endpoint).
    Resource(u64),
    /// A Sigma pair.
    Pair(Box<Value>, Box<Value>),
    Fun(Box<FunValue>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunValue {
    /// Parameter names with their implicit flags, in application order.
    pub params: Vec<(String, bool)>,
    pub applied: Vec<Value>,
    pub body: FunBody,
    pub env: Env,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunBody {
    Expr(KExpr),
    Prim(String),
}

pub type Env = HashMap<String, Value>;

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => write!(f, "()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Resource(id) => write!(f, "r{id}"),
            Value::Pair(a, b) => write!(f, "({a}, {b})"),
            Value::Fun(_) => write!(f, "<fun>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RtError {
    /// A runtime guard tripped: the program did something the type system is
    /// supposed to prevent (double close, stale write, ...).
    Guard(String),
    /// No task can make progress on a blocking receive.
    Deadlock(String),
    /// An uncaught `throw`.
    Thrown(String),
    StepLimit,
    Other(String),
}

impl RtError {
    pub fn code(&self) -> &'static str {
        match self {
            RtError::Guard(_) => "R_GUARD",
            RtError::Deadlock(_) => "R_DEADLOCK",
            RtError::Thrown(_) => "R_THROW",
            RtError::StepLimit => "R_STEP_LIMIT",
            RtError::Other(_) => "R_ERROR",
        }
    }

    pub fn message(&self) -> String {
        match self {
            RtError::Guard(m) | RtError::Deadlock(m) | RtError::Thrown(m) | RtError::Other(m) => {
                m.clone()
            }
            RtError::StepLimit => "step limit exceeded".into(),
        }
    }
}

type RResult<T> = Result<T, RtError>;

// ---------------------------------------------------------------------------
// World state

#[derive(Debug, Default)]
struct FileState {
    open: bool,
    contents: String,
}

#[derive(Debug, Default)]
struct LockState {
    name: String,
    held: bool,
}

#[derive(Debug, Default)]
struct DomState {
    /// Open element stack.
    stack: Vec<String>,
    /// Rendered markup so far.
    out: String,
}

#[derive(Debug, Default)]
struct Channel {
    /// Messages in flight in each direction, indexed by receiving side.
    queues: [VecDeque<Value>; 2],
}

/// Which channel an endpoint belongs to and which side it is.
#[derive(Debug, Clone, Copy)]
struct Endpoint {
    chan: usize,
    side: usize,
}

#[derive(Debug, Default)]
pub struct World {
    next_id: u64,
    files: HashMap<u64, FileState>,
    locks: HashMap<u64, LockState>,
    doms: HashMap<u64, DomState>,
    chans: Vec<Channel>,
    endpoints: HashMap<u64, Endpoint>,
    /// The global mutable file slot used by the storage-leak example.
    global_file: Option<u64>,
    /// Scripted stdin for `readLine`, consumed front to back.
    input: VecDeque<String>,
    pub trace: Vec<String>,
}

impl World {
    fn fresh(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }
}

// ---------------------------------------------------------------------------
// Interpreter

pub struct Interp<'a> {
    prog: &'a KProgram,
    pub world: World,
    /// Queued thunks from `task.spawn`, run when a receive blocks.
    tasks: VecDeque<Value>,
    steps: u64,
    step_limit: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub value: Value,
    pub trace: Vec<String>,
}

/// Evaluate the program's top-level vals in order, then call `main()`.
///
/// Runs on a dedicated thread with a large stack: the evaluator recurses
/// one native frame per redex.
pub fn run_program(prog: &KProgram, step_limit: Option<u64>) -> Result<RunOutcome, RtError> {
    run_program_with(prog, step_limit, Vec::new())
}

/// Like [`run_program`], with scripted lines for `readLine`.
pub fn run_program_with(
    prog: &KProgram,
    step_limit: Option<u64>,
    input: Vec<String>,
) -> Result<RunOutcome, RtError> {
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(256 * 1024 * 1024)
            .spawn_scoped(s, || run_on_current_thread(prog, step_limit, input))
            .expect("spawn interpreter thread")
            .join()
            .expect("interpreter thread panicked")
    })
}

fn run_on_current_thread(
    prog: &KProgram,
    step_limit: Option<u64>,
    input: Vec<String>,
) -> Result<RunOutcome, RtError> {
    let mut it = Interp {
        prog,
        world: World { input: input.into(), ..World::default() },
        tasks: VecDeque::new(),
        steps: 0,
        step_limit: step_limit.unwrap_or(DEFAULT_STEP_LIMIT),
    };
    let mut env: Env = HashMap::new();
    for v in &prog.vals {
        let val = it.eval(&env, &v.init)?;
        env.insert(v.name.clone(), val);
    }
    let value = match it.lookup_def("main") {
        Some(f) => it.apply(f, Value::Unit)?,
        None => Value::Unit,
    };
    Ok(RunOutcome { value, trace: it.world.trace })
}

impl<'a> Interp<'a> {
    fn step(&mut self) -> RResult<()> {
        self.steps += 1;
        if self.steps > self.step_limit {
            return Err(RtError::StepLimit);
        }
        Ok(())
    }

    fn lookup_def(&self, name: &str) -> Option<Value> {
        let d = self.prog.def(name)?;
        Some(def_value(d))
    }

    pub fn eval(&mut self, env: &Env, e: &KExpr) -> RResult<Value> {
        self.step()?;
        match &e.kind {
            KExprKind::Unit => Ok(Value::Unit),
            KExprKind::Bool(b) => Ok(Value::Bool(*b)),
            KExprKind::Int(n) => Ok(Value::Int(*n)),
            KExprKind::Str(s) => Ok(Value::Str(s.clone())),
            KExprKind::Var(x) => {
                if let Some(v) = env.get(x) {
                    return Ok(v.clone());
                }
                self.lookup_def(x)
                    .ok_or_else(|| RtError::Other(format!("unbound variable `{x}`")))
            }
            KExprKind::Select { base, field } => {
                let b = self.eval(env, base)?;
                match (b, field.as_str()) {
                    (Value::Pair(a, _), "a") => Ok(*a),
                    (Value::Pair(_, b), "b") => Ok(*b),
                    (v, f) => Err(RtError::Other(format!("`{v}` has no field `{f}`"))),
                }
            }
            KExprKind::Apply { func, arg } => {
                let f = self.eval(env, func)?;
                let a = self.eval(env, arg)?;
                self.apply(f, a)
            }
            KExprKind::TyApply { func, .. } => self.eval(env, func),
            KExprKind::Lambda { param, implicit, body, .. } => Ok(Value::Fun(Box::new(FunValue {
                params: vec![(param.clone(), *implicit)],
                applied: Vec::new(),
                body: FunBody::Expr((**body).clone()),
                env: env.clone(),
            }))),
            KExprKind::Block { stmts } => {
                let mut env = env.clone();
                let mut last = Value::Unit;
                for s in stmts {
                    match s {
                        KStmt::Let { name, init, .. } => {
                            let v = self.eval(&env, init)?;
                            env.insert(name.clone(), v);
                            last = Value::Unit;
                        }
                        KStmt::Def(d) => {
                            let mut f = def_value(d);
                            if let Value::Fun(fun) = &mut f {
                                fun.env = env.clone();
                            }
                            env.insert(d.name.clone(), f);
                            last = Value::Unit;
                        }
                        KStmt::Expr(inner) => last = self.eval(&env, inner)?,
                    }
                }
                Ok(last)
            }
            KExprKind::If { cond, then_branch, else_branch } => {
                match self.eval(env, cond)? {
                    Value::Bool(true) => self.eval(env, then_branch),
                    Value::Bool(false) => match else_branch {
                        Some(eb) => self.eval(env, eb),
                        None => Ok(Value::Unit),
                    },
                    v => Err(RtError::Other(format!("`if` condition evaluated to `{v}`"))),
                }
            }
            KExprKind::Summon(_) => Ok(Value::Unit),
            KExprKind::Ascribe { expr, .. } => self.eval(env, expr),
            KExprKind::Throw(inner) => {
                let v = self.eval(env, inner)?;
                Err(RtError::Thrown(v.to_string()))
            }
            KExprKind::SigmaIntro { a, b, .. } => {
                let av = self.eval(env, a)?;
                let bv = self.eval(env, b)?;
                Ok(Value::Pair(Box::new(av), Box::new(bv)))
            }
        }
    }

    /// Apply one explicit argument, auto-filling implicit parameters with
    /// `Unit` (capabilities have no runtime content).
    pub fn apply(&mut self, f: Value, arg: Value) -> RResult<Value> {
        self.step()?;
        let Value::Fun(mut fun) = f else {
            return Err(RtError::Other(format!("`{f}` is not a function")));
        };
        while fun.applied.len() < fun.params.len() && fun.params[fun.applied.len()].1 {
            fun.applied.push(Value::Unit);
        }
        if fun.applied.len() >= fun.params.len() {
            return Err(RtError::Other("function applied to too many arguments".into()));
        }
        fun.applied.push(arg);
        while fun.applied.len() < fun.params.len() && fun.params[fun.applied.len()].1 {
            fun.applied.push(Value::Unit);
        }
        if fun.applied.len() < fun.params.len() {
            return Ok(Value::Fun(fun));
        }
        self.invoke(*fun)
    }

    fn invoke(&mut self, fun: FunValue) -> RResult<Value> {
        match &fun.body {
            FunBody::Prim(name) => {
                let args: Vec<Value> = fun
                    .params
                    .iter()
                    .zip(fun.applied.iter())
                    .filter(|((_, implicit), _)| !implicit)
                    .map(|(_, v)| v.clone())
                    .collect();
                self.prim(name, args)
            }
            FunBody::Expr(body) => {
                let mut env = fun.env.clone();
                for ((name, _), v) in fun.params.iter().zip(fun.applied.into_iter()) {
                    env.insert(name.clone(), v);
                }
                self.eval(&env, body)
            }
        }
    }

    // -- primitives ---------------------------------------------------------

    fn trace(&mut self, line: String) {
        self.world.trace.push(line);
    }


    fn file_mut(&mut self, v: &Value) -> RResult<(u64, &mut FileState)> {
        let Value::Resource(id) = v else {
            return Err(RtError::Other(format!("`{v}` is not a file handle")));
        };
        match self.world.files.get_mut(id) {
            Some(f) => Ok((*id, f)),
            None => Err(RtError::Other(format!("r{id} is not a file"))),
        }
    }

    fn lock_state_id(&mut self, v: &Value) -> RResult<(u64, &mut LockState)> {
        let Value::Resource(id) = v else {
            return Err(RtError::Other(format!("`{v}` is not a lock")));
        };
        match self.world.locks.get_mut(id) {
            Some(l) => Ok((*id, l)),
            None => Err(RtError::Other(format!("r{id} is not a lock"))),
        }
    }

    fn lock_state(&mut self, v: &Value) -> RResult<&mut LockState> {
        self.lock_state_id(v).map(|(_, l)| l)
    }

    fn prim(&mut self, name: &str, args: Vec<Value>) -> RResult<Value> {
        // DOM element constructors: the runtime value of an element is its tag.
        if let Some(tag) = name.strip_prefix("elem.") {
            return Ok(Value::Str(tag.to_string()));
        }
        match name {
            // -- files ------------------------------------------------------
            "file.mk" => {
                let path = str_arg(&args, 0)?;
                let id = self.world.fresh();
                self.world
                    .files
                    .insert(id, FileState { open: false, contents: String::new() });
                self.trace(format!("file.mk({path:?}) = r{id}"));
                Ok(Value::Resource(id))
            }
            "file.mkOpen" => {
                // Create the file already open, returning the handle bundled
                // with its (erased) open-capability witness.
                let path = str_arg(&args, 0)?;
                let id = self.world.fresh();
                self.world
                    .files
                    .insert(id, FileState { open: true, contents: String::new() });
                self.trace(format!("file.mkOpen({path:?}) = r{id}"));
                Ok(Value::Pair(Box::new(Value::Resource(id)), Box::new(Value::Unit)))
            }
            "file.open" => {
                let (id, f) = self.file_mut(&args[0])?;
                if f.open {
                    return Err(RtError::Guard(format!("r{id} is already open")));
                }
                f.open = true;
                self.trace(format!("file.open(r{id})"));
                Ok(Value::Unit)
            }
            "file.read" => {
                let (id, f) = self.file_mut(&args[0])?;
                if !f.open {
                    return Err(RtError::Guard(format!("read from closed file r{id}")));
                }
                let s = f.contents.clone();
                self.trace(format!("file.read(r{id}) = {s:?}"));
                Ok(Value::Str(s))
            }
            "file.write" => {
                let s = str_arg(&args, 1)?;
                let (id, f) = self.file_mut(&args[0])?;
                if !f.open {
                    return Err(RtError::Guard(format!("write to closed file r{id}")));
                }
                f.contents.push_str(&s);
                self.trace(format!("file.write(r{id}, {s:?})"));
                Ok(Value::Unit)
            }
            "file.close" => {
                let (id, f) = self.file_mut(&args[0])?;
                if !f.open {
                    return Err(RtError::Guard(format!("close of closed file r{id}")));
                }
                f.open = false;
                self.trace(format!("file.close(r{id})"));
                Ok(Value::Unit)
            }
            "file.mkClosed" => {
                let path = str_arg(&args, 0)?;
                let id = self.world.fresh();
                self.world
                    .files
                    .insert(id, FileState { open: false, contents: String::new() });
                self.trace(format!("file.mkClosed({path:?}) = r{id}"));
                Ok(Value::Pair(Box::new(Value::Resource(id)), Box::new(Value::Unit)))
            }
            // Transition-style open/close: reissue the capability as a bundle.
            "file.openT" | "file.openH" => {
                let (id, f) = self.file_mut(&args[0])?;
                if f.open {
                    return Err(RtError::Guard(format!("r{id} is already open")));
                }
                f.open = true;
                self.trace(format!("file.open(r{id})"));
                if name == "file.openH" {
                    Ok(args[0].clone())
                } else {
                    Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
                }
            }
            "file.closeT" | "file.closeH" => {
                let (id, f) = self.file_mut(&args[0])?;
                if !f.open {
                    return Err(RtError::Guard(format!("close of closed file r{id}")));
                }
                f.open = false;
                self.trace(format!("file.close(r{id})"));
                if name == "file.closeH" {
                    Ok(args[0].clone())
                } else {
                    Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
                }
            }
            "file.setGlobal" => {
                let Value::Resource(id) = args[0] else {
                    return Err(RtError::Other("setGlobal expects a file".into()));
                };
                self.world.global_file = Some(id);
                self.trace(format!("file.setGlobal(r{id})"));
                Ok(Value::Unit)
            }
            "file.getGlobal" => match self.world.global_file {
                Some(id) => {
                    self.trace(format!("file.getGlobal() = r{id}"));
                    Ok(Value::Resource(id))
                }
                None => Err(RtError::Guard("no global file set".into())),
            },
            // -- locks ------------------------------------------------------
            "lock.mk" => {
                let name_arg = str_arg(&args, 0)?;
                let id = self.world.fresh();
                self.world.locks.insert(id, LockState { name: name_arg.clone(), held: false });
                self.trace(format!("lock.mk({name_arg:?}) = r{id}"));
                Ok(Value::Resource(id))
            }
            "lock.acquire" => {
                let Value::Resource(id) = args[0] else {
                    return Err(RtError::Other("acquire expects a lock".into()));
                };
                let l = self
                    .world
                    .locks
                    .get_mut(&id)
                    .ok_or_else(|| RtError::Other(format!("r{id} is not a lock")))?;
                if l.held {
                    return Err(RtError::Guard(format!("lock {} acquired twice", l.name)));
                }
                l.held = true;
                self.trace(format!("lock.acquire(r{id})"));
                Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
            }
            "lock.mkS" => {
                let Value::Int(n) = args[0] else {
                    return Err(RtError::Other("mkTable expects an integer".into()));
                };
                let id = self.world.fresh();
                self.world.locks.insert(id, LockState { name: format!("table{n}"), held: false });
                self.trace(format!("lock.mk({n}) = r{id}"));
                Ok(Value::Pair(Box::new(Value::Resource(id)), Box::new(Value::Unit)))
            }
            "lock.row" => {
                let Value::Int(n) = args[1] else {
                    return Err(RtError::Other("locateRow expects an integer".into()));
                };
                let t = self.lock_state(&args[0])?;
                if !t.held {
                    return Err(RtError::Guard(format!("locateRow on unlocked {}", t.name)));
                }
                let row_name = format!("{}.row{}", t.name.clone(), n);
                let id = self.world.fresh();
                self.world.locks.insert(id, LockState { name: row_name, held: false });
                self.trace(format!("lock.row({n}) = r{id}"));
                Ok(Value::Pair(Box::new(Value::Resource(id)), Box::new(Value::Unit)))
            }
            "lock.acquireRow" => {
                let table_held = self.lock_state(&args[0])?.held;
                let (id, r) = self.lock_state_id(&args[1])?;
                if !table_held {
                    return Err(RtError::Guard("lockRow without the table lock".into()));
                }
                if r.held {
                    return Err(RtError::Guard(format!("lock {} acquired twice", r.name)));
                }
                r.held = true;
                self.trace(format!("lock.acquire(r{id})"));
                Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
            }
            "lock.compute" => {
                let (id, r) = self.lock_state_id(&args[0])?;
                if !r.held {
                    return Err(RtError::Guard(format!("compute on unlocked {}", r.name)));
                }
                let out = format!("computed({})", r.name);
                self.trace(format!("lock.compute(r{id}) = {out:?}"));
                Ok(Value::Str(out))
            }
            "lock.query" => {
                let q = str_arg(&args, 1)?;
                let Value::Resource(id) = args[0] else {
                    return Err(RtError::Other("query expects a lock".into()));
                };
                let l = self
                    .world
                    .locks
                    .get_mut(&id)
                    .ok_or_else(|| RtError::Other(format!("r{id} is not a lock")))?;
                if !l.held {
                    return Err(RtError::Guard(format!("query on unlocked table {}", l.name)));
                }
                let out = format!("rows({}: {})", l.name, q);
                self.trace(format!("lock.query(r{id}, {q:?}) = {out:?}"));
                Ok(Value::Str(out))
            }
            "lock.release" => {
                let Value::Resource(id) = args[0] else {
                    return Err(RtError::Other("release expects a lock".into()));
                };
                let l = self
                    .world
                    .locks
                    .get_mut(&id)
                    .ok_or_else(|| RtError::Other(format!("r{id} is not a lock")))?;
                if !l.held {
                    return Err(RtError::Guard(format!("lock {} released while free", l.name)));
                }
                l.held = false;
                self.trace(format!("lock.release(r{id})"));
                Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
            }
            // -- DOM builders -----------------------------------------------
            "dom.mk" | "dom.mkS" => {
                let id = self.world.fresh();
                self.world.doms.insert(id, DomState::default());
                self.trace(format!("dom.mk() = r{id}"));
                if name == "dom.mkS" {
                    Ok(Value::Pair(Box::new(Value::Resource(id)), Box::new(Value::Unit)))
                } else {
                    Ok(Value::Resource(id))
                }
            }
            "dom.openTag" => {
                let tag = str_arg(&args, 1)?;
                let d = self.dom_mut(&args[0])?;
                d.stack.push(tag.clone());
                d.out.push_str(&format!("<{tag}>"));
                self.trace(format!("dom.openTag({tag:?})"));
                Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
            }
            "dom.closeTag" => {
                let want = str_arg(&args, 1).ok();
                let d = self.dom_mut(&args[0])?;
                let Some(tag) = d.stack.pop() else {
                    return Err(RtError::Guard("closeTag with no open element".into()));
                };
                if let Some(w) = want {
                    if w != tag {
                        return Err(RtError::Guard(format!(
                            "closeTag({w:?}) but innermost open element is {tag:?}"
                        )));
                    }
                }
                d.out.push_str(&format!("</{tag}>"));
                self.trace(format!("dom.closeTag() = {tag:?}"));
                Ok(Value::Pair(Box::new(Value::Unit), Box::new(Value::Unit)))
            }
            "dom.text" => {
                let s = str_arg(&args, args.len() - 1)?;
                let d = self.dom_mut(&args[0])?;
                if d.stack.is_empty() {
                    return Err(RtError::Guard("text outside any element".into()));
                }
                d.out.push_str(&s);
                self.trace(format!("dom.text({s:?})"));
                Ok(Value::Unit)
            }
            "dom.render" => {
                let d = self.dom_mut(&args[0])?;
                if !d.stack.is_empty() {
                    return Err(RtError::Guard(format!(
                        "render with {} unclosed element(s)",
                        d.stack.len()
                    )));
                }
                let out = d.out.clone();
                self.trace(format!("dom.render() = {out:?}"));
                Ok(Value::Str(out))
            }
            // -- channels and tasks -----------------------------------------
            "chan.mk" => {
                let chan = self.world.chans.len();
                self.world.chans.push(Channel::default());
                let e0 = self.world.fresh();
                let e1 = self.world.fresh();
                self.world.endpoints.insert(e0, Endpoint { chan, side: 0 });
                self.world.endpoints.insert(e1, Endpoint { chan, side: 1 });
                self.trace(format!("chan.mk() = (r{e0}, r{e1})"));
                Ok(Value::Pair(Box::new(Value::Resource(e0)), Box::new(Value::Resource(e1))))
            }
            "chan.send" => {
                let ep = self.endpoint(&args[0])?;
                let v = args[1].clone();
                self.trace(format!("chan.send({v})"));
                // A send to side s is received by the other side.
                self.world.chans[ep.chan].queues[1 - ep.side].push_back(v);
                Ok(args[0].clone())
            }
            "chan.recv" => {
                let ep = self.endpoint(&args[0])?;
                loop {
                    if let Some(v) = self.world.chans[ep.chan].queues[ep.side].pop_front() {
                        self.trace(format!("chan.recv() = {v}"));
                        // Returns (message, continuation endpoint).
                        return Ok(Value::Pair(Box::new(v), Box::new(args[0].clone())));
                    }
                    let Some(task) = self.tasks.pop_front() else {
                        return Err(RtError::Deadlock("receive on empty channel with no runnable task".into()));
                    };
                    self.apply(task, Value::Unit)?;
                }
            }
            "chan.end" => {
                self.trace("chan.end()".into());
                Ok(Value::Unit)
            }
            "task.spawn" => {
                let f = args[0].clone();
                if !matches!(f, Value::Fun(_)) {
                    return Err(RtError::Other("spawn expects a function".into()));
                }
                self.trace("task.spawn()".into());
                self.tasks.push_back(f);
                Ok(Value::Unit)
            }
            // -- misc -------------------------------------------------------
            "io.readLine" => {
                let s = self.world.input.pop_front().unwrap_or_default();
                self.trace(format!("io.readLine() = {s:?}"));
                Ok(Value::Str(s))
            }
            "io.print" => {
                let s = str_arg(&args, 0)?;
                self.trace(format!("io.print({s:?})"));
                Ok(Value::Unit)
            }
            "str.concat" => {
                let a = str_arg(&args, 0)?;
                let b = str_arg(&args, 1)?;
                Ok(Value::Str(format!("{a}{b}")))
            }
            "str.eq" => {
                let a = str_arg(&args, 0)?;
                let b = str_arg(&args, 1)?;
                Ok(Value::Bool(a == b))
            }
            "int.add" => match (&args[0], &args[1]) {
                (Value::Int(a), Value::Int(b)) => Ok(Value::Int(a + b)),
                _ => Err(RtError::Other("int.add expects integers".into())),
            },
            "int.toStr" => match &args[0] {
                Value::Int(n) => Ok(Value::Str(n.to_string())),
                _ => Err(RtError::Other("int.toStr expects an integer".into())),
            },
            "pair.fst" => match &args[0] {
                Value::Pair(a, _) => Ok((**a).clone()),
                v => Err(RtError::Other(format!("fst of non-pair `{v}`"))),
            },
            "pair.snd" => match &args[0] {
                Value::Pair(_, b) => Ok((**b).clone()),
                v => Err(RtError::Other(format!("snd of non-pair `{v}`"))),
            },
            _ => Err(RtError::Other(format!("unknown primitive `{name}`"))),
        }
    }

    fn dom_mut(&mut self, v: &Value) -> RResult<&mut DomState> {
        let Value::Resource(id) = v else {
            return Err(RtError::Other(format!("`{v}` is not a DOM tree")));
        };
        self.world
            .doms
            .get_mut(id)
            .ok_or_else(|| RtError::Other(format!("r{id} is not a DOM tree")))
    }

    fn endpoint(&self, v: &Value) -> RResult<Endpoint> {
        let Value::Resource(id) = v else {
            return Err(RtError::Other(format!("`{v}` is not a channel endpoint")));
        };
        self.world
            .endpoints
            .get(id)
            .copied()
            .ok_or_else(|| RtError::Other(format!("r{id} is not a channel endpoint")))
    }
}

fn def_value(d: &KDef) -> Value {
    let body = match &d.extern_prim {
        Some(p) => FunBody::Prim(p.clone()),
        None => FunBody::Expr(d.body.clone().expect("non-extern def has a body")),
    };
    Value::Fun(Box::new(FunValue {
        params: d.params.iter().map(|p| (p.name.clone(), p.implicit)).collect(),
        applied: Vec::new(),
        body,
        env: HashMap::new(),
    }))
}

fn str_arg(args: &[Value], i: usize) -> RResult<String> {
    match args.get(i) {
        Some(Value::Str(s)) => Ok(s.clone()),
        Some(v) => Err(RtError::Other(format!("expected a string, got `{v}`"))),
        None => Err(RtError::Other("missing argument".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str) -> Result<RunOutcome, RtError> {
        let p = crate::syntax::parse_program("t.cap", src).unwrap();
        let k = crate::desugar::desugar_program(&p).unwrap();
        run_program(&k, None)
    }

    const FILE_API: &str = r#"
class File { type IsOpen }
extern def mkFile(path: Str): File^ = "file.mk"
extern def openFile(f: File): f.IsOpen^ = "file.open"
extern def readAll(f: File)(using c: f.IsOpen): Str = "file.read"
extern def writeAll(f: File, s: Str)(using c: f.IsOpen): Unit = "file.write"
extern def closeFile(f: File)(using c: f.IsOpen): Unit @kill(c) = "file.close"
"#;

    #[test]
    fn file_roundtrip_traces() {
        let out = run(&format!(
            "{FILE_API}
def main(): Str = {{
  val f = mkFile(\"a.txt\")
  implicit val c = openFile(f)
  writeAll(f, \"hi\")
  val s = readAll(f)
  closeFile(f)
  s
}}"
        ))
        .unwrap();
        assert_eq!(out.value, Value::Str("hi".into()));
        assert_eq!(
            out.trace,
            vec![
                "file.mk(\"a.txt\") = r1",
                "file.open(r1)",
                "file.write(r1, \"hi\")",
                "file.read(r1) = \"hi\"",
                "file.close(r1)",
            ]
        );
    }

    #[test]
    fn double_close_trips_guard() {
        let err = run(&format!(
            "{FILE_API}
def main(): Unit = {{
  val f = mkFile(\"a.txt\")
  implicit val c = openFile(f)
  closeFile(f)
  closeFile(f)
}}"
        ))
        .unwrap_err();
        assert_eq!(err.code(), "R_GUARD");
    }

    #[test]
    fn implicit_params_are_erased() {
        // closeFile has an implicit capability parameter; at runtime the call
        // carries only the file.
        let out = run(&format!(
            "{FILE_API}
def main(): Unit = {{
  val f = mkFile(\"a.txt\")
  implicit val c = openFile(f)
  closeFile(f)
}}"
        ))
        .unwrap();
        assert_eq!(out.value, Value::Unit);
    }

    #[test]
    fn spawn_runs_on_blocking_recv() {
        let out = run(
            r#"
class Chan
extern def mkRaw(u: Unit): Chan^ = "chan.mk"
extern def fst(p: Chan): Chan^ = "pair.fst"
extern def snd(p: Chan): Chan^ = "pair.snd"
extern def sendRaw(c: Chan, v: Str): Chan^ = "chan.send"
extern def recvRaw(c: Chan): Chan^ = "chan.recv"
extern def spawn(body: (u: Unit) => Unit): Unit = "task.spawn"
extern def msgOf(p: Chan): Str = "pair.fst"
def main(): Str = {
  val p = mkRaw(())
  val mine = fst(p)
  val theirs = snd(p)
  spawn((u: Unit) => { sendRaw(theirs, "ping"); () })
  val got = recvRaw(mine)
  msgOf(got)
}
"#,
        )
        .unwrap();
        assert_eq!(out.value, Value::Str("ping".into()));
    }

    #[test]
    fn recv_with_no_sender_deadlocks() {
        let err = run(
            r#"
class Chan
extern def mkRaw(u: Unit): Chan^ = "chan.mk"
extern def fst(p: Chan): Chan^ = "pair.fst"
extern def recvRaw(c: Chan): Chan^ = "chan.recv"
def main(): Unit = {
  val p = mkRaw(())
  val mine = fst(p)
  recvRaw(mine)
  ()
}
"#,
        )
        .unwrap_err();
        assert_eq!(err.code(), "R_DEADLOCK");
    }

    #[test]
    fn dom_guards_unbalanced_tags() {
        let err = run(
            r#"
class Tree
extern def mkTree(u: Unit): Tree^ = "dom.mk"
extern def openTag(t: Tree, tag: Str): Unit = "dom.openTag"
extern def render(t: Tree): Str = "dom.render"
def main(): Str = {
  val t = mkTree(())
  openTag(t, "div")
  render(t)
}
"#,
        )
        .unwrap_err();
        assert_eq!(err.code(), "R_GUARD");
    }

    #[test]
    fn step_limit_catches_divergence() {
        let src = r#"
def loop(n: Int): Int = loop(n)
def main(): Int = loop(1)
"#;
        let p = crate::syntax::parse_program("t.cap", src).unwrap();
        let k = crate::desugar::desugar_program(&p).unwrap();
        let err = run_program(&k, Some(2_000)).unwrap_err();
        assert_eq!(err.code(), "R_STEP_LIMIT");
    }
}
