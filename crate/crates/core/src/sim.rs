//! Monte Carlo execution of a program.
//!
//! Every sample owns a ChaCha stream selected by its index, so results do
//! not depend on how samples are spread over threads. Draws use inverse-CDF
//! sampling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::Distribution;
use crate::engine::{parse_monomial, program_hash, Method, MomentRow, MomentTable, StateMono};
use crate::error::{Error, Result};
use crate::lower::var_index;
use crate::prog::{Expr, Func, Program};

const BLOCK: usize = 2048;

#[derive(Clone, Debug)]
enum Code {
    Num(f64),
    Var(usize),
    Draw(Distribution),
    Neg(Box<Code>),
    Add(Box<Code>, Box<Code>),
    Sub(Box<Code>, Box<Code>),
    Mul(Box<Code>, Box<Code>),
    Scale(Box<Code>, f64),
    Pow(Box<Code>, i32),
    Call(Func, Box<Code>),
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl Code {
    fn compile(e: &Expr, index: &std::collections::HashMap<&str, usize>) -> Code {
        let b = |x: &Expr| Box::new(Code::compile(x, index));
        match e {
            Expr::Num(x) => Code::Num(*x),
            Expr::Var(v) => Code::Var(index[v.as_str()]),
            Expr::Draw(d) => Code::Draw(*d),
            Expr::Neg(a) => Code::Neg(b(a)),
            Expr::Add(x, y) => Code::Add(b(x), b(y)),
            Expr::Sub(x, y) => Code::Sub(b(x), b(y)),
            Expr::Mul(x, y) => Code::Mul(b(x), b(y)),
            Expr::Div(x, y) => Code::Scale(b(x), 1.0 / y.eval_const().expect("constant divisor")),
            Expr::Pow(x, k) => Code::Pow(b(x), *k as i32),
            Expr::Call(f, x) => Code::Call(*f, b(x)),
        }
    }

    fn eval(&self, env: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Code::Num(x) => *x,
            Code::Var(i) => env[*i],
            Code::Draw(d) => d.quantile(uniform01(rng)),
            Code::Neg(a) => -a.eval(env, rng),
            Code::Add(a, b) => {
                let x = a.eval(env, rng);
                x + b.eval(env, rng)
            }
            Code::Sub(a, b) => {
                let x = a.eval(env, rng);
                x - b.eval(env, rng)
            }
            Code::Mul(a, b) => {
                let x = a.eval(env, rng);
                x * b.eval(env, rng)
            }
            Code::Scale(a, k) => a.eval(env, rng) * k,
            Code::Pow(a, k) => a.eval(env, rng).powi(*k),
            Code::Call(f, a) => f.apply(a.eval(env, rng)),
        }
    }
}

struct Stmt {
    targets: Vec<usize>,
    values: Vec<Code>,
}

/// A program compiled for repeated forward execution.
pub struct Simulator {
    variables: Vec<String>,
    initials: Vec<Stmt>,
    body: Vec<Stmt>,
}

impl Simulator {
    pub fn new(p: &Program) -> Simulator {
        let index = var_index(p);
        let compile = |block: &[crate::prog::Assign]| {
            block
                .iter()
                .map(|a| Stmt {
                    targets: a.targets.iter().map(|t| index[t.as_str()]).collect(),
                    values: a.values.iter().map(|e| Code::compile(e, &index)).collect(),
                })
                .collect()
        };
        Simulator {
            variables: p.variables.clone(),
            initials: compile(&p.initials),
            body: compile(&p.body),
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    fn exec(block: &[Stmt], env: &mut [f64], rng: &mut ChaCha8Rng, scratch: &mut Vec<f64>) {
        for st in block {
            scratch.clear();
            for v in &st.values {
                let x = v.eval(env, rng);
                scratch.push(x);
            }
            for (t, x) in st.targets.iter().zip(scratch.iter()) {
                env[*t] = *x;
            }
        }
    }

    fn rng(seed: u64, sample: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sample);
        rng
    }

    /// Runs one trajectory and calls `visit(n, state)` after the initial
    /// block (n = 0) and after every iteration up to `n`.
    pub fn run_with(
        &self,
        n: u64,
        seed: u64,
        sample: u64,
        mut visit: impl FnMut(u64, &[f64]),
    ) -> Result<()> {
        let mut rng = Self::rng(seed, sample);
        let mut env = vec![0.0; self.variables.len()];
        let mut scratch = Vec::new();
        Self::exec(&self.initials, &mut env, &mut rng, &mut scratch);
        Self::check(&env, sample, 0)?;
        visit(0, &env);
        for it in 1..=n {
            Self::exec(&self.body, &mut env, &mut rng, &mut scratch);
            Self::check(&env, sample, it)?;
            visit(it, &env);
        }
        Ok(())
    }

    /// State after `n` iterations of sample `sample`, in variable order.
    pub fn run(&self, n: u64, seed: u64, sample: u64) -> Result<Vec<f64>> {
        let mut last = Vec::new();
        self.run_with(n, seed, sample, |it, env| {
            if it == n {
                last = env.to_vec();
            }
        })?;
        Ok(last)
    }

    fn check(env: &[f64], sample: u64, iteration: u64) -> Result<()> {
        if env.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteSample { sample, iteration })
        }
    }
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Default)]
struct Acc {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Acc) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            f64::NAN
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

fn eval_mono(m: &StateMono, env: &[f64]) -> f64 {
    m.powers().iter().map(|(v, e)| env[*v].powi(*e as i32)).product()
}

/// Sample means and standard errors of `targets` at every iteration in `ns`.
pub fn simulate_at(
    p: &Program,
    ns: &[u64],
    samples: usize,
    seed: u64,
    targets: &[&str],
) -> Result<MomentTable> {
    if samples == 0 {
        return Err(Error::Invalid("at least one sample is required".into()));
    }
    let monos: Vec<StateMono> = targets
        .iter()
        .map(|t| parse_monomial(p, t))
        .collect::<Result<_>>()?;
    let names: Vec<String> = targets.iter().map(|t| t.trim().to_string()).collect();
    let sim = Simulator::new(p);
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let width = ns.len() * monos.len();
    let blocks: Vec<Result<Vec<Acc>>> = (0..samples.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut accs = vec![Acc::default(); width];
            for s in b * BLOCK..((b + 1) * BLOCK).min(samples) {
                sim.run_with(n_max, seed, s as u64, |it, env| {
                    for (k, n) in ns.iter().enumerate() {
                        if *n == it {
                            for (j, m) in monos.iter().enumerate() {
                                accs[k * monos.len() + j].push(eval_mono(m, env));
                            }
                        }
                    }
                })?;
            }
            Ok(accs)
        })
        .collect();
    let mut total = vec![Acc::default(); width];
    for b in blocks {
        for (t, a) in total.iter_mut().zip(b?) {
            t.merge(&a);
        }
    }
    let mut rows = Vec::new();
    for (k, n) in ns.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let a = &total[k * monos.len() + j];
            rows.push(MomentRow {
                n: *n,
                monomial: name.clone(),
                value: a.mean,
                std_error: Some(a.std_error()),
            });
        }
    }
    Ok(MomentTable {
        program_hash: program_hash(p),
        method: Method::Simulation { samples, seed },
        rows,
    })
}

pub fn simulate(p: &Program, n: u64, samples: usize, seed: u64, targets: &[&str]) -> Result<MomentTable> {
    simulate_at(p, &[n], samples, seed, targets)
}
