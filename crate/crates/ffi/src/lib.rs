//! C ABI over the FE oracle and trained surrogates.
//!
//! Every function returns a [`DfStatus`]; on failure a description is kept
//! per thread and read back with [`df_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deepfea_core::fem::{
    run_simulation, MaterialLEM, SimOptions, SimulationRecord, DEFAULT_THICKNESS,
};
use deepfea_core::mesh::{grid_topology, Face, LoadSpec, MeshTopology};
use deepfea_core::store::read_model;
use deepfea_core::surrogate::Surrogate;
use deepfea_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidTopology = 3,
    InvalidLoad = 4,
    Simulation = 5,
    CorruptData = 6,
    Io = 7,
    /// Buffer too small; the required length was written back.
    BufferTooSmall = 8,
    Internal = 9,
    Panic = 10,
}

impl From<&Error> for DfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidTopology(_) => DfStatus::InvalidTopology,
            Error::InvalidLoad(_) => DfStatus::InvalidLoad,
            Error::Simulation { .. } | Error::Solve(_) => DfStatus::Simulation,
            Error::CorruptDataset { .. } | Error::Json { .. } => DfStatus::CorruptData,
            Error::Io { .. } => DfStatus::Io,
            Error::Config(_) | Error::Split(_) | Error::UndefinedMetric(_) => {
                DfStatus::InvalidArgument
            }
            _ => DfStatus::Internal,
        }
    }
}

/// One load case on a regular 2D grid with the bottom row fixed.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DfCase {
    pub nodes_x: usize,
    pub nodes_y: usize,
    pub spacing: f64,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub thickness: f64,
    pub load_node: usize,
    pub angle_deg: f64,
    pub max_magnitude: f64,
    /// Recorded frames after the initial one.
    pub steps: usize,
    pub duration: f64,
}

/// Opaque simulation result (oracle or surrogate).
pub struct DfRecord(SimulationRecord);

/// Opaque trained surrogate.
pub struct DfSurrogate(Surrogate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), (DfStatus, String)>) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DfStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (DfStatus, String) {
    (DfStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (DfStatus, String) {
    (DfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

impl DfCase {
    fn topology(&self) -> Result<MeshTopology, Error> {
        grid_topology(&[self.nodes_y, self.nodes_x], self.spacing, Face::Bottom)
    }

    fn material(&self) -> MaterialLEM {
        MaterialLEM {
            young_modulus: self.young_modulus,
            poisson_ratio: self.poisson_ratio,
            density: self.density,
            thickness: self.thickness,
        }
    }

    fn load(&self) -> LoadSpec {
        LoadSpec::new(self.load_node, self.angle_deg, self.max_magnitude)
    }

    fn options(&self) -> SimOptions {
        SimOptions {
            duration: self.duration,
            steps: self.steps,
            ..SimOptions::default()
        }
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `out` with the default 9×9 desk case (1 MN at 45° on the top-left node).
///
/// # Safety
/// `out` must be null or point to writable memory for one `DfCase`.
#[no_mangle]
pub unsafe extern "C" fn df_case_default(out: *mut DfCase) -> DfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = MaterialLEM::default();
        *out = DfCase {
            nodes_x: 9,
            nodes_y: 9,
            spacing: 0.125,
            young_modulus: m.young_modulus,
            poisson_ratio: m.poisson_ratio,
            density: m.density,
            thickness: DEFAULT_THICKNESS,
            load_node: 72,
            angle_deg: 45.0,
            max_magnitude: 1e6,
            steps: 50,
            duration: 1.0,
        };
        Ok(())
    })
}

/// Runs the FE oracle.
///
/// # Safety
/// `case` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_oracle_run(case: *const DfCase, out: *mut *mut DfRecord) -> DfStatus {
    guard(|| {
        let case = deref(case, "case")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rec = run_simulation(
            &case.topology().map_err(core_err)?,
            &case.material(),
            &case.load(),
            &case.options(),
        )
        .map_err(core_err)?;
        *out = Box::into_raw(Box::new(DfRecord(rec)));
        Ok(())
    })
}

/// Loads a model archive directory (`model.json` + `model.bin`).
///
/// # Safety
/// `dir` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_surrogate_load(
    dir: *const c_char,
    out: *mut *mut DfSurrogate,
) -> DfStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| (DfStatus::InvalidArgument, "dir is not UTF-8".to_string()))?;
        let archive = read_model(Path::new(dir)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(DfSurrogate(archive.surrogate)));
        Ok(())
    })
}

/// Autoregressive rollout of `case` from rest.
///
/// # Safety
/// Pointers must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_surrogate_predict(
    surrogate: *const DfSurrogate,
    case: *const DfCase,
    out: *mut *mut DfRecord,
) -> DfStatus {
    guard(|| {
        let s = deref(surrogate, "surrogate")?;
        let case = deref(case, "case")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let topo = case.topology().map_err(core_err)?;
        let load = case.load();
        load.validate(&topo).map_err(core_err)?;
        let opts = case.options();
        let rec =
            s.0.predict_load(&topo, &case.material(), &load, opts.steps, opts.record_dt())
                .map_err(core_err)?;
        *out = Box::into_raw(Box::new(DfRecord(rec)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from `df_surrogate_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_surrogate_free(s: *mut DfSurrogate) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `r` must be null or a record handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_record_free(r: *mut DfRecord) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Frame count `T + 1`, node count and element count.
///
/// # Safety
/// `r` must be null or valid; each output must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn df_record_sizes(
    r: *const DfRecord,
    frames: *mut usize,
    nodes: *mut usize,
    elements: *mut usize,
) -> DfStatus {
    guard(|| {
        let r = &deref(r, "record")?.0;
        *frames.as_mut().ok_or_else(|| null("frames"))? = r.frames.len();
        *nodes.as_mut().ok_or_else(|| null("nodes"))? = r.topology.n_nodes();
        *elements.as_mut().ok_or_else(|| null("elements"))? = r.topology.n_elements();
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfField {
    /// Node displacements, all x then all y.
    Displacement = 0,
    /// Current node coordinates, all x then all y.
    Coordinates = 1,
    /// Element effective stress, Pa.
    Stress = 2,
    /// Element effective strain.
    Strain = 3,
}

/// Copies one field of one frame into `buf`. `len` holds the buffer
/// capacity on input and the field length on output.
///
/// # Safety
/// `r` must be null or valid; `buf` must hold `*len` doubles.
#[no_mangle]
pub unsafe extern "C" fn df_record_copy(
    r: *const DfRecord,
    frame: usize,
    field: DfField,
    buf: *mut f64,
    len: *mut usize,
) -> DfStatus {
    guard(|| {
        let r = &deref(r, "record")?.0;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let f = r.frames.get(frame).ok_or_else(|| {
            (
                DfStatus::InvalidArgument,
                format!("frame {frame} out of range (0..{})", r.frames.len()),
            )
        })?;
        let src = match field {
            DfField::Displacement => &f.displacements,
            DfField::Coordinates => &f.coords,
            DfField::Stress => &f.stress,
            DfField::Strain => &f.strain,
        };
        let cap = *len;
        *len = src.len();
        if cap < src.len() {
            return Err((
                DfStatus::BufferTooSmall,
                format!("buffer holds {cap} values, field needs {}", src.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}
