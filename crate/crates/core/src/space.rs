//! The subnet configuration space: validation, counting, sampling, genetic
//! operators and resolution into a profilable [`NetworkSkeleton`].

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{SpaceError, Violation};
use crate::memory::{build_stage, stage_stride, ExpandRatio, NetworkSkeleton};
use crate::planner::{self, ChannelSchedule, PlanMode, ReferenceConfig};

/// Seeded generator used by every randomized operation.
pub type SpaceRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SpaceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn default_num_classes() -> u32 {
    1000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupernetSpace {
    pub num_stages: usize,
    pub depth_options: Vec<u32>,
    pub kernel_options: Vec<u32>,
    pub expand_options: Vec<u32>,
    pub resolution_options: Vec<u32>,
    pub schedule: ChannelSchedule,
    #[serde(default = "default_num_classes")]
    pub num_classes: u32,
}

impl SupernetSpace {
    /// Five stages, depths {2,3,4}, kernels {3,5,7}, expands {2,3,4},
    /// resolutions {128,160,192,224}, widths from the numeric planner at the
    /// maximal reference configuration.
    pub fn moofa() -> Self {
        let report = planner::plan_schedule(
            ReferenceConfig::default(),
            planner::DEFAULT_STEM_WIDTH,
            planner::DEFAULT_DIVISOR,
            PlanMode::NumericBalance,
            5,
        )
        .expect("reference schedule is feasible");
        Self::moofa_with_schedule(report.schedule)
    }

    pub fn moofa_with_schedule(schedule: ChannelSchedule) -> Self {
        SupernetSpace {
            num_stages: 5,
            depth_options: vec![2, 3, 4],
            kernel_options: vec![3, 5, 7],
            expand_options: vec![2, 3, 4],
            resolution_options: vec![128, 160, 192, 224],
            schedule,
            num_classes: default_num_classes(),
        }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let lists: [(&str, &Vec<u32>); 4] = [
            ("depth_options", &self.depth_options),
            ("kernel_options", &self.kernel_options),
            ("expand_options", &self.expand_options),
            ("resolution_options", &self.resolution_options),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(SpaceError::InvalidSpace(format!("{name} is empty")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SpaceError::InvalidSpace(format!("{name} is not strictly ascending")));
            }
            if list[0] == 0 {
                return Err(SpaceError::InvalidSpace(format!("{name} contains zero")));
            }
        }
        if self.num_stages == 0 {
            return Err(SpaceError::InvalidSpace("num_stages must be positive".into()));
        }
        if self.schedule.stage_widths.len() != self.num_stages {
            return Err(SpaceError::InvalidSpace(format!(
                "schedule has {} stage widths for {} stages",
                self.schedule.stage_widths.len(),
                self.num_stages
            )));
        }
        self.schedule.validate().map_err(SpaceError::InvalidSpace)?;
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        self.depth_options.iter().copied().max().unwrap_or(0) as usize
    }

    /// Every option at its maximum.
    pub fn reference_config(&self) -> ReferenceConfig {
        let max = |v: &[u32]| v.iter().copied().max().unwrap_or(0);
        ReferenceConfig {
            depth: max(&self.depth_options),
            kernel: max(&self.kernel_options),
            expand: max(&self.expand_options),
            resolution: max(&self.resolution_options),
        }
    }

    /// The configuration with every gene at its largest option.
    pub fn maximal_config(&self) -> SubnetConfig {
        let r = self.reference_config();
        SubnetConfig::uniform(self.num_stages, self.max_depth(), r.resolution, r.depth, r.kernel, r.expand)
    }

    /// The configuration with every gene at its smallest option.
    pub fn minimal_config(&self) -> SubnetConfig {
        SubnetConfig::uniform(
            self.num_stages,
            self.max_depth(),
            self.resolution_options[0],
            self.depth_options[0],
            self.kernel_options[0],
            self.expand_options[0],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageGenes {
    pub depth: u32,
    /// One entry per slot up to the space's maximum depth; slots past
    /// `depth` are carried but inert.
    pub kernels: Vec<u32>,
    pub expands: Vec<u32>,
}

impl StageGenes {
    pub fn active_layers(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.kernels
            .iter()
            .copied()
            .zip(self.expands.iter().copied())
            .take(self.depth as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubnetConfig {
    pub resolution: u32,
    pub stages: Vec<StageGenes>,
}

impl SubnetConfig {
    pub fn uniform(num_stages: usize, slots: usize, resolution: u32, depth: u32, kernel: u32, expand: u32) -> Self {
        SubnetConfig {
            resolution,
            stages: (0..num_stages)
                .map(|_| StageGenes {
                    depth,
                    kernels: vec![kernel; slots],
                    expands: vec![expand; slots],
                })
                .collect(),
        }
    }

    /// Resolution, then per stage the depth and the active `(kernel, expand)` pairs.
    pub fn active_genes(&self) -> Vec<u32> {
        let mut genes = vec![self.resolution];
        for stage in &self.stages {
            genes.push(stage.depth);
            for (k, e) in stage.active_layers() {
                genes.push(k);
                genes.push(e);
            }
        }
        genes
    }
}

/// Lists every option-set violation; `Ok` when there are none.
pub fn validate(config: &SubnetConfig, space: &SupernetSpace) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });
    if !space.resolution_options.contains(&config.resolution) {
        push(
            "resolution".into(),
            format!("{} not in resolution_options {:?}", config.resolution, space.resolution_options),
        );
    }
    if config.stages.len() != space.num_stages {
        push(
            "stages".into(),
            format!("{} stages, space has {}", config.stages.len(), space.num_stages),
        );
    }
    let slots = space.max_depth();
    for (s, stage) in config.stages.iter().enumerate() {
        if !space.depth_options.contains(&stage.depth) {
            push(
                format!("stages[{s}].depth"),
                format!("{} not in depth_options {:?}", stage.depth, space.depth_options),
            );
        }
        for (name, list, options) in [
            ("kernels", &stage.kernels, &space.kernel_options),
            ("expands", &stage.expands, &space.expand_options),
        ] {
            if list.len() != slots {
                push(
                    format!("stages[{s}].{name}"),
                    format!("{} slots, expected {slots}", list.len()),
                );
            }
            let option_name = if name == "kernels" { "kernel_options" } else { "expand_options" };
            for (j, v) in list.iter().enumerate() {
                if !options.contains(v) {
                    push(
                        format!("stages[{s}].{name}[{j}]"),
                        format!("{v} not in {option_name} {options:?}"),
                    );
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn ensure_valid(config: &SubnetConfig, space: &SupernetSpace) -> Result<(), SpaceError> {
    validate(config, space).map_err(SpaceError::Validation)
}

/// `[Σ_d (|K|·|E|)^d]^stages`: distinct active-gene assignments, resolution excluded.
pub fn count_subnets(space: &SupernetSpace) -> BigUint {
    let per_layer = BigUint::from(space.kernel_options.len() * space.expand_options.len());
    let per_stage: BigUint = space.depth_options.iter().map(|&d| per_layer.pow(d)).sum();
    per_stage.pow(space.num_stages as u32)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, options: &[u32]) -> u32 {
    options[rng.random_range(0..options.len())]
}

pub fn sample_uniform_with<R: Rng + ?Sized>(rng: &mut R, space: &SupernetSpace) -> SubnetConfig {
    let slots = space.max_depth();
    let resolution = pick(rng, &space.resolution_options);
    let stages = (0..space.num_stages)
        .map(|_| {
            let depth = pick(rng, &space.depth_options);
            let mut kernels = Vec::with_capacity(slots);
            let mut expands = Vec::with_capacity(slots);
            for _ in 0..slots {
                kernels.push(pick(rng, &space.kernel_options));
                expands.push(pick(rng, &space.expand_options));
            }
            StageGenes { depth, kernels, expands }
        })
        .collect();
    SubnetConfig { resolution, stages }
}

pub fn sample_uniform(space: &SupernetSpace, seed: u64) -> SubnetConfig {
    sample_uniform_with(&mut rng_from_seed(seed), space)
}

/// Resamples each gene with probability `prob`. With `freeze_resolution`
/// the resolution gene is left alone.
pub fn mutate_with<R: Rng + ?Sized>(
    rng: &mut R,
    config: &SubnetConfig,
    space: &SupernetSpace,
    prob: f64,
    freeze_resolution: bool,
) -> SubnetConfig {
    let prob = prob.clamp(0.0, 1.0);
    let mut out = config.clone();
    if rng.random_bool(prob) && !freeze_resolution {
        out.resolution = pick(rng, &space.resolution_options);
    }
    for stage in &mut out.stages {
        if rng.random_bool(prob) {
            stage.depth = pick(rng, &space.depth_options);
        }
        for j in 0..stage.kernels.len().max(stage.expands.len()) {
            if rng.random_bool(prob) {
                if let Some(k) = stage.kernels.get_mut(j) {
                    *k = pick(rng, &space.kernel_options);
                }
            }
            if rng.random_bool(prob) {
                if let Some(e) = stage.expands.get_mut(j) {
                    *e = pick(rng, &space.expand_options);
                }
            }
        }
    }
    out
}

pub fn mutate(config: &SubnetConfig, space: &SupernetSpace, prob: f64, seed: u64) -> SubnetConfig {
    mutate_with(&mut rng_from_seed(seed), config, space, prob, false)
}

/// Gene-wise uniform crossover. Both parents must be valid in `space`.
pub fn crossover_with<R: Rng + ?Sized>(
    rng: &mut R,
    a: &SubnetConfig,
    b: &SubnetConfig,
    space: &SupernetSpace,
    freeze_resolution: bool,
) -> Result<SubnetConfig, SpaceError> {
    ensure_valid(a, space)?;
    ensure_valid(b, space)?;
    if a.stages.len() != b.stages.len() {
        return Err(SpaceError::Mismatch(format!(
            "{} vs {} stages",
            a.stages.len(),
            b.stages.len()
        )));
    }
    let mut coin = |x: u32, y: u32| if rng.random_bool(0.5) { x } else { y };
    let resolution = if freeze_resolution {
        a.resolution
    } else {
        coin(a.resolution, b.resolution)
    };
    let stages = a
        .stages
        .iter()
        .zip(&b.stages)
        .map(|(sa, sb)| {
            let depth = coin(sa.depth, sb.depth);
            let mut kernels = Vec::with_capacity(sa.kernels.len());
            let mut expands = Vec::with_capacity(sa.expands.len());
            for j in 0..sa.kernels.len() {
                kernels.push(coin(sa.kernels[j], sb.kernels[j]));
                expands.push(coin(sa.expands[j], sb.expands[j]));
            }
            StageGenes { depth, kernels, expands }
        })
        .collect();
    Ok(SubnetConfig { resolution, stages })
}

pub fn crossover(a: &SubnetConfig, b: &SubnetConfig, space: &SupernetSpace, seed: u64) -> Result<SubnetConfig, SpaceError> {
    crossover_with(&mut rng_from_seed(seed), a, b, space, false)
}

/// Builds the network for a configuration: stem at `schedule.stem_width`,
/// the active blocks of each stage at the stage width (stride 2 on the first
/// block of every stage but the last), then the head. The classifier is
/// excluded from the peak; set `include_classifier` on the result to count it.
pub fn resolve(config: &SubnetConfig, space: &SupernetSpace) -> Result<NetworkSkeleton, SpaceError> {
    ensure_valid(config, space)?;
    resolve_unchecked(config, space)
}

/// [`resolve`] without re-validating option sets; the caller guarantees validity.
pub(crate) fn resolve_unchecked(config: &SubnetConfig, space: &SupernetSpace) -> Result<NetworkSkeleton, SpaceError> {
    let resolution = config.resolution;
    let to_res_err = |source| SpaceError::Resolution { resolution, source };
    if !resolution.is_multiple_of(2) {
        return Err(to_res_err(crate::error::ShapeError::NonDivisible { input_size: resolution }));
    }
    let mut size = resolution / 2;
    let mut channels = space.schedule.stem_width;
    let mut stages = Vec::with_capacity(space.num_stages);
    for (s, genes) in config.stages.iter().enumerate() {
        let width = space.schedule.stage_widths[s];
        let stride = stage_stride(s, space.num_stages);
        let layers = genes.active_layers().map(|(k, e)| (k, ExpandRatio::from_int(e)));
        let blocks = build_stage(channels, width, size, stride, layers).map_err(to_res_err)?;
        if let Some(last) = blocks.last() {
            size = last.output_size();
            channels = last.c_out;
        }
        stages.push(blocks);
    }
    Ok(NetworkSkeleton {
        resolution,
        stem_width: space.schedule.stem_width,
        stages,
        head_width: space.schedule.head_width,
        include_classifier: false,
        num_classes: space.num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::profile_network;

    fn space() -> SupernetSpace {
        SupernetSpace::moofa()
    }

    #[test]
    fn moofa_space_is_valid() {
        let s = space();
        s.validate().unwrap();
        assert_eq!(s.reference_config(), ReferenceConfig::default());
    }

    #[test]
    fn validate_examples() {
        let s = space();
        assert!(validate(&s.maximal_config(), &s).is_ok());

        let mut c = s.maximal_config();
        c.stages[1].expands[2] = 6;
        let v = validate(&c, &s).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "stages[1].expands[2]");
        assert!(v[0].message.contains("expand_options"));

        let mut c = s.maximal_config();
        c.stages[4].depth = 5;
        c.resolution = 100;
        c.stages[0].kernels.pop();
        let v = validate(&c, &s).unwrap_err();
        let paths: Vec<&str> = v.iter().map(|x| x.path.as_str()).collect();
        assert_eq!(paths, ["resolution", "stages[0].kernels", "stages[4].depth"]);
        assert!(v[2].message.contains("depth_options"));
    }

    #[test]
    fn moofa_count_is_7371_pow_5() {
        let n = count_subnets(&space());
        assert_eq!(n, BigUint::from(7371u32).pow(5));
        assert_eq!(n.to_string(), "21758655492572485851");
    }

    #[test]
    fn tiny_counts() {
        let mut s = space();
        s.num_stages = 1;
        s.depth_options = vec![1];
        s.kernel_options = vec![3];
        s.expand_options = vec![2];
        assert_eq!(count_subnets(&s), BigUint::from(1u32));
        s.num_stages = 2;
        s.kernel_options = vec![3, 5];
        assert_eq!(count_subnets(&s), BigUint::from(4u32));
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let s = space();
        assert_eq!(sample_uniform(&s, 7), sample_uniform(&s, 7));
        let mut rng = rng_from_seed(1);
        for _ in 0..500 {
            let c = sample_uniform_with(&mut rng, &s);
            assert!(validate(&c, &s).is_ok());
        }
    }

    #[test]
    fn mutation_extremes() {
        let s = space();
        let c = sample_uniform(&s, 3);
        assert_eq!(mutate(&c, &s, 0.0, 11), c);
        assert_eq!(mutate(&c, &s, 0.7, 11), mutate(&c, &s, 0.7, 11));
        let mut rng = rng_from_seed(5);
        let frozen = mutate_with(&mut rng, &c, &s, 1.0, true);
        assert_eq!(frozen.resolution, c.resolution);
        assert!(validate(&frozen, &s).is_ok());
    }

    #[test]
    fn crossover_properties() {
        let s = space();
        let a = sample_uniform(&s, 1);
        let b = sample_uniform(&s, 2);
        assert_eq!(crossover(&a, &a, &s, 9).unwrap(), a);
        let child = crossover(&a, &b, &s, 9).unwrap();
        assert_eq!(child, crossover(&a, &b, &s, 9).unwrap());
        assert!([a.resolution, b.resolution].contains(&child.resolution));
        for (st, (sa, sb)) in child.stages.iter().zip(a.stages.iter().zip(&b.stages)) {
            assert!(st.depth == sa.depth || st.depth == sb.depth);
            for j in 0..st.kernels.len() {
                assert!(st.kernels[j] == sa.kernels[j] || st.kernels[j] == sb.kernels[j]);
                assert!(st.expands[j] == sa.expands[j] || st.expands[j] == sb.expands[j]);
            }
        }
        let mut bad = b.clone();
        bad.stages.pop();
        assert!(crossover(&a, &bad, &s, 9).is_err());
    }

    #[test]
    fn resolve_reference_walk() {
        let s = space();
        let sk = resolve(&s.maximal_config(), &s).unwrap();
        let inputs: Vec<u32> = sk.stages.iter().map(|st| st[0].input_size).collect();
        assert_eq!(inputs, [112, 56, 28, 14, 7]);
        assert_eq!(sk.stages.iter().map(Vec::len).sum::<usize>(), 20);
        assert_eq!(sk.stages[4][0].stride, 1);
        profile_network(&sk).unwrap();
    }

    #[test]
    fn inert_slots_do_not_matter() {
        let s = space();
        let mut a = s.minimal_config();
        let mut b = a.clone();
        b.stages[2].kernels[3] = 7;
        b.stages[2].expands[2] = 4;
        assert_eq!(resolve(&a, &s).unwrap(), resolve(&b, &s).unwrap());
        a.stages[2].depth = 4;
        assert_ne!(resolve(&a, &s).unwrap(), resolve(&b, &s).unwrap());
    }

    #[test]
    fn bad_resolution_is_reported() {
        let mut s = space();
        s.resolution_options.push(100);
        let mut c = s.maximal_config();
        c.resolution = 100;
        assert!(matches!(resolve(&c, &s), Err(SpaceError::Resolution { resolution: 100, .. })));
    }
}
