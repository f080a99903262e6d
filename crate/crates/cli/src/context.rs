use std::cell::OnceCell;
use std::path::{Path, PathBuf};

use timeslice_core::field_solver::{green_kernel, vacuum_two_point};
use timeslice_core::kernel_cache::{cache_path, load_or_build};
use timeslice_core::{FreeField, KernelKind, KleinGordonOperator};

use crate::{CliError, LoadedConfig, RunOptions, VerificationConfig};

/// Kernels that are cached; the commutator and Feynman kernels are cheap
/// functions of these.
pub const CACHED_KINDS: [KernelKind; 3] = [KernelKind::Retarded, KernelKind::Advanced, KernelKind::TwoPoint];

fn build_kernel(op: &KleinGordonOperator, kind: KernelKind) -> timeslice_core::Result<timeslice_core::Kernel> {
    match kind {
        KernelKind::TwoPoint => vacuum_two_point(op),
        _ => green_kernel(op, kind),
    }
}

/// The free field of `op`, reading and filling `cache_dir` when given.
pub fn build_field(op: KleinGordonOperator, cache_dir: Option<&Path>) -> Result<FreeField, CliError> {
    let Some(dir) = cache_dir else {
        return Ok(FreeField::new(op)?);
    };
    let mut kernels = Vec::with_capacity(3);
    for kind in CACHED_KINDS {
        kernels.push(load_or_build(dir, &op, kind, || build_kernel(&op, kind))?);
    }
    let two_point = kernels.pop().expect("three kernels");
    let advanced = kernels.pop().expect("three kernels");
    let retarded = kernels.pop().expect("three kernels");
    Ok(FreeField::from_kernels(op, retarded, advanced, two_point)?)
}

/// Precompute the cache for `config`; returns the files written or found.
pub fn build_cache(config: &VerificationConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let op = config.operator()?;
    build_field(op.clone(), Some(dir))?;
    Ok(CACHED_KINDS.iter().map(|&k| cache_path(dir, &op, k)).collect())
}

/// Shared state for one `verify` invocation.
pub struct Context<'a> {
    pub config: &'a VerificationConfig,
    pub config_digest: &'a str,
    pub seed: u64,
    pub order: usize,
    cache_dir: Option<PathBuf>,
    field: OnceCell<FreeField>,
}

impl<'a> Context<'a> {
    pub fn new(loaded: &'a LoadedConfig, opts: &RunOptions) -> Result<Self, CliError> {
        let order = opts.order.unwrap_or(loaded.config.order);
        if order == 0 || order > timeslice_core::perturbation::MAX_ORDER {
            return Err(CliError::Config(format!(
                "order must be between 1 and {}, got {order}",
                timeslice_core::perturbation::MAX_ORDER
            )));
        }
        Ok(Self {
            config: &loaded.config,
            config_digest: &loaded.digest,
            seed: opts.seed.unwrap_or(loaded.config.seed),
            order,
            cache_dir: opts.cache_dir.clone(),
            field: OnceCell::new(),
        })
    }

    /// Built on first use; suites that need no kernels never pay for them.
    pub fn field(&self) -> Result<&FreeField, CliError> {
        if self.field.get().is_none() {
            let field = build_field(self.config.operator()?, self.cache_dir.as_deref())?;
            let _ = self.field.set(field);
        }
        Ok(self.field.get().expect("field built above"))
    }
}
