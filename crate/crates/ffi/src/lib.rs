//! C interface to quadratic bilevel problems.
//!
//! Problems are opaque [`HgProblem`] handles. Every fallible call returns an
//! [`HgStatus`]; on failure the message is available from
//! [`hg_last_error_message`] on the same thread. Matrices are row-major and
//! every output buffer must hold the documented number of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hypergrad::ad::FlatVector;
use hypergrad::bilevel::{inner_optimize, BilevelProblem, OptimizerState};
use hypergrad::hypergrad::{hypergradient, InverseStrategy};
use hypergrad::problems::{exact_quadratic_hypergradient, make_quadratic, QuadraticBilevelSpec};
use hypergrad::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Validation = 3,
    Numeric = 4,
    Capacity = 5,
    Panic = 6,
    Other = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgStrategyKind {
    Identity = 0,
    Neumann = 1,
    Cg = 2,
    ExactDense = 3,
    Unrolled = 4,
    TruncatedUnrolled = 5,
}

/// Inverse-Hessian strategy. Fields a kind does not use are ignored:
/// `steps` is the Neumann term count, CG iteration cap or unrolled step
/// count; `kept` is only read for truncated unrolling.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HgStrategy {
    pub kind: HgStrategyKind,
    pub steps: usize,
    pub kept: usize,
    pub alpha: f64,
    pub tol: f64,
}

impl HgStrategy {
    fn to_rust(self) -> InverseStrategy {
        match self.kind {
            HgStrategyKind::Identity => InverseStrategy::Identity,
            HgStrategyKind::Neumann => InverseStrategy::Neumann {
                terms: self.steps,
                alpha: self.alpha,
            },
            HgStrategyKind::Cg => InverseStrategy::Cg {
                tol: self.tol,
                max_iter: self.steps,
            },
            HgStrategyKind::ExactDense => InverseStrategy::ExactDense,
            HgStrategyKind::Unrolled => InverseStrategy::Unrolled {
                steps: self.steps,
                alpha: self.alpha,
            },
            HgStrategyKind::TruncatedUnrolled => InverseStrategy::TruncatedUnrolled {
                steps: self.steps,
                kept: self.kept,
                alpha: self.alpha,
            },
        }
    }
}

/// Opaque problem handle.
pub struct HgProblem {
    spec: QuadraticBilevelSpec,
    problem: BilevelProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HgStatus {
    match e {
        Error::Dimension(_) => HgStatus::Dimension,
        Error::Validation(_) | Error::Config(_) => HgStatus::Validation,
        Error::Capacity { .. } => HgStatus::Capacity,
        e if e.is_numeric() => HgStatus::Numeric,
        _ => HgStatus::Other,
    }
}

struct Fail(HgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside hypergrad".into());
            HgStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a>(p: *const HgProblem) -> Result<&'a HgProblem, Fail> {
    p.as_ref().ok_or_else(|| null("problem"))
}

fn new_handle(spec: QuadraticBilevelSpec) -> Result<*mut HgProblem, Fail> {
    let problem = make_quadratic(&spec)?;
    Ok(Box::into_raw(Box::new(HgProblem { spec, problem })))
}

/// Quadratic problem `L_T = ½wᵀAw + wᵀ(Bλ + c)`, `L_V = ½‖w − t‖²` with `A`
/// `m×m` symmetric positive definite, `B` `m×n`, and `c`, `t` of length `m`.
/// Writes the new handle to `out`.
///
/// # Safety
/// Input pointers must reference arrays of the stated sizes and `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_quadratic_new(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    t: *const f64,
    m: usize,
    n: usize,
    out: *mut *mut HgProblem,
) -> HgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let spec = QuadraticBilevelSpec {
            a: DMatrix::from_row_slice(m, m, slice(a, m * m, "a")?),
            b: DMatrix::from_row_slice(m, n, slice(b, m * n, "b")?),
            c: DVector::from_column_slice(slice(c, m, "c")?),
            t: DVector::from_column_slice(slice(t, m, "t")?),
        };
        *out = new_handle(spec)?;
        Ok(())
    })
}

/// Seeded random quadratic problem with `m` weights and `n` hyperparameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_quadratic_random(m: usize, n: usize, seed: u64, out: *mut *mut HgProblem) -> HgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        *out = new_handle(QuadraticBilevelSpec::random(m, n, seed))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hg_problem_free(problem: *mut HgProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of weights, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hg_problem_weights_dim(problem: *const HgProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.spec.weights_dim())
}

/// Number of hyperparameters, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hg_problem_lambda_dim(problem: *const HgProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.spec.lambda_dim())
}

/// Hypergradient at `(λ, w)`. `total`, `direct` and `indirect` receive
/// `lambda_dim` doubles each; `direct` and `indirect` may be null.
///
/// # Safety
/// `lambda` and `w` must hold `lambda_dim` and `weights_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn hg_hypergradient(
    problem: *const HgProblem,
    lambda: *const f64,
    w: *const f64,
    strategy: HgStrategy,
    seed: u64,
    total: *mut f64,
    direct: *mut f64,
    indirect: *mut f64,
) -> HgStatus {
    guard(|| {
        let p = handle(problem)?;
        let (m, n) = (p.spec.weights_dim(), p.spec.lambda_dim());
        let lam = FlatVector::from_vec(p.spec.lambda_layout(), slice(lambda, n, "lambda")?.to_vec())?;
        let w = FlatVector::from_vec(p.spec.weights_layout(), slice(w, m, "w")?.to_vec())?;
        let report = hypergradient(&p.problem, &lam, &w, &strategy.to_rust(), seed)?;
        slice_mut(total, n, "total")?.copy_from_slice(report.total.as_slice());
        if !direct.is_null() {
            slice_mut(direct, n, "direct")?.copy_from_slice(report.direct.as_slice());
        }
        if !indirect.is_null() {
            slice_mut(indirect, n, "indirect")?.copy_from_slice(report.indirect.as_slice());
        }
        Ok(())
    })
}

/// `steps` plain SGD steps on `L_T` from `w0` at fixed `λ`; the result goes
/// to `w_out` (`weights_dim` doubles, may alias `w0`).
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn hg_inner_sgd(
    problem: *const HgProblem,
    lambda: *const f64,
    w0: *const f64,
    steps: usize,
    lr: f64,
    seed: u64,
    w_out: *mut f64,
) -> HgStatus {
    guard(|| {
        let p = handle(problem)?;
        let (m, n) = (p.spec.weights_dim(), p.spec.lambda_dim());
        let lam = FlatVector::from_vec(p.spec.lambda_layout(), slice(lambda, n, "lambda")?.to_vec())?;
        let w = FlatVector::from_vec(p.spec.weights_layout(), slice(w0, m, "w0")?.to_vec())?;
        let run = inner_optimize(&p.problem, &lam, &w, steps, OptimizerState::sgd(lr)?, seed)?;
        slice_mut(w_out, m, "w_out")?.copy_from_slice(run.weights.as_slice());
        Ok(())
    })
}

/// Closed-form best response `w*(λ)` (`weights_dim` doubles, may be null)
/// and exact hypergradient (`lambda_dim` doubles).
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn hg_quadratic_exact_hypergradient(
    problem: *const HgProblem,
    lambda: *const f64,
    hypergrad: *mut f64,
    w_star: *mut f64,
) -> HgStatus {
    guard(|| {
        let p = handle(problem)?;
        let (m, n) = (p.spec.weights_dim(), p.spec.lambda_dim());
        let lam = FlatVector::from_vec(p.spec.lambda_layout(), slice(lambda, n, "lambda")?.to_vec())?;
        let (w, g) = exact_quadratic_hypergradient(&p.spec, &lam)?;
        slice_mut(hypergrad, n, "hypergrad")?.copy_from_slice(g.as_slice());
        if !w_star.is_null() {
            slice_mut(w_star, m, "w_star")?.copy_from_slice(w.as_slice());
        }
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` as a
/// nul-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator, or 0 when there is no
/// error.
///
/// # Safety
/// `buf` must be null or hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}
