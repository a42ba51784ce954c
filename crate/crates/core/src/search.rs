//! Evolutionary search for the highest-scoring subnet under a peak-memory
//! constraint.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{SearchError, SpaceError};
use crate::predictor::ScorePredictor;
use crate::space::{self, crossover_with, mutate_with, rng_from_seed, sample_uniform_with, SpaceRng, SubnetConfig, SupernetSpace};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConstraint {
    pub max_peak_items: u64,
    /// The classifier record is left out of the peak, as in the reported results.
    #[serde(default = "default_true")]
    pub exclude_classifier: bool,
}

impl SearchConstraint {
    pub fn new(max_peak_items: u64) -> Self {
        SearchConstraint {
            max_peak_items,
            exclude_classifier: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub population: usize,
    pub generations: usize,
    pub parent_fraction: f64,
    pub mutation_prob: f64,
    /// Share of non-parent slots filled by mutation; crossover fills the rest.
    pub mutation_fraction: f64,
    pub seed: u64,
    pub freeze_resolution: bool,
    /// Attempts per child slot before it falls back to a fresh feasible sample.
    pub child_retries: usize,
    /// Uniform draws allowed when looking for one feasible configuration.
    pub sample_budget: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            population: 100,
            generations: 50,
            parent_fraction: 0.25,
            mutation_prob: 0.1,
            mutation_fraction: 0.5,
            seed: 0,
            freeze_resolution: false,
            child_retries: 50,
            sample_budget: 1_000_000,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidParams(m));
        if self.population < 2 {
            return bad(format!("population must be at least 2, got {}", self.population));
        }
        if self.generations == 0 {
            return bad("generations must be positive".into());
        }
        for (name, v) in [
            ("parent_fraction", self.parent_fraction),
            ("mutation_fraction", self.mutation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("mutation_prob must lie in [0, 1], got {}", self.mutation_prob));
        }
        if self.sample_budget == 0 {
            return bad("sample_budget must be positive".into());
        }
        Ok(())
    }

    fn parent_count(&self) -> usize {
        ((self.population as f64 * self.parent_fraction).round() as usize).clamp(1, self.population - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_score: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: SubnetConfig,
    pub best_score: f64,
    pub best_peak_items: u64,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Peak of the resolved network under the constraint's classifier convention.
pub fn constrained_peak(config: &SubnetConfig, space: &SupernetSpace, constraint: &SearchConstraint) -> Result<u64, SpaceError> {
    let mut skeleton = space::resolve(config, space)?;
    skeleton.include_classifier = !constraint.exclude_classifier;
    skeleton.peak_items().map_err(|source| SpaceError::Resolution {
        resolution: config.resolution,
        source,
    })
}

pub fn feasible(config: &SubnetConfig, space: &SupernetSpace, constraint: &SearchConstraint) -> Result<bool, SpaceError> {
    Ok(constrained_peak(config, space, constraint)? <= constraint.max_peak_items)
}

#[derive(Debug, Clone)]
struct Individual {
    config: SubnetConfig,
    score: f64,
    peak: u64,
}

struct Searcher<'a, P: ?Sized> {
    space: &'a SupernetSpace,
    constraint: SearchConstraint,
    predictor: &'a P,
    params: &'a SearchParams,
    rng: SpaceRng,
    evaluations: usize,
}

impl<P: ScorePredictor + ?Sized> Searcher<'_, P> {
    fn admit(&mut self, config: SubnetConfig, peak: u64) -> Result<Individual, SearchError> {
        assert!(
            peak <= self.constraint.max_peak_items,
            "infeasible individual admitted: {peak} > {}",
            self.constraint.max_peak_items
        );
        let score = self.predictor.predict_score(&config, self.space)?;
        self.evaluations += 1;
        Ok(Individual { config, score, peak })
    }

    fn check(&self, config: &SubnetConfig) -> Result<Option<u64>, SearchError> {
        let peak = constrained_peak(config, self.space, &self.constraint)?;
        Ok((peak <= self.constraint.max_peak_items).then_some(peak))
    }

    fn fresh_feasible(&mut self) -> Result<Individual, SearchError> {
        let mut tightest = u64::MAX;
        for _ in 0..self.params.sample_budget {
            let config = sample_uniform_with(&mut self.rng, self.space);
            let peak = constrained_peak(&config, self.space, &self.constraint)?;
            if peak <= self.constraint.max_peak_items {
                return self.admit(config, peak);
            }
            tightest = tightest.min(peak);
        }
        Err(SearchError::Infeasible {
            max_peak_items: self.constraint.max_peak_items,
            attempts: self.params.sample_budget,
            tightest_peak: tightest,
        })
    }

    fn child(&mut self, parents: &[Individual], by_mutation: bool) -> Result<Individual, SearchError> {
        for _ in 0..self.params.child_retries {
            let candidate = if by_mutation {
                let p = &parents[self.rng.random_range(0..parents.len())];
                mutate_with(
                    &mut self.rng,
                    &p.config,
                    self.space,
                    self.params.mutation_prob,
                    self.params.freeze_resolution,
                )
            } else {
                let a = &parents[self.rng.random_range(0..parents.len())];
                let b = &parents[self.rng.random_range(0..parents.len())];
                crossover_with(&mut self.rng, &a.config, &b.config, self.space, self.params.freeze_resolution)?
            };
            if let Some(peak) = self.check(&candidate)? {
                return self.admit(candidate, peak);
            }
        }
        self.fresh_feasible()
    }
}

fn rank(population: &mut [Individual]) {
    population.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Rejection-seeded population, truncation selection with the parents kept,
/// and children from mutation or crossover; infeasible children are redrawn.
pub fn search<P: ScorePredictor + ?Sized>(
    space: &SupernetSpace,
    constraint: &SearchConstraint,
    predictor: &P,
    params: &SearchParams,
) -> Result<SearchResult, SearchError> {
    params.validate()?;
    space.validate()?;
    if constraint.max_peak_items == 0 {
        return Err(SearchError::InvalidParams("max_peak_items must be positive".into()));
    }
    let mut s = Searcher {
        space,
        constraint: *constraint,
        predictor,
        params,
        rng: rng_from_seed(params.seed),
        evaluations: 0,
    };

    let mut population = Vec::with_capacity(params.population);
    for _ in 0..params.population {
        population.push(s.fresh_feasible()?);
    }

    let parents = params.parent_count();
    let mutants = (((params.population - parents) as f64) * params.mutation_fraction).round() as usize;
    let mut history = Vec::with_capacity(params.generations);
    for generation in 0..params.generations {
        rank(&mut population);
        let mean_score = population.iter().map(|i| i.score).sum::<f64>() / population.len() as f64;
        history.push(GenerationStats {
            generation,
            best_score: population[0].score,
            mean_score,
        });
        if generation + 1 == params.generations {
            break;
        }
        population.truncate(parents);
        let elite = population.clone();
        for slot in 0..params.population - parents {
            let child = s.child(&elite, slot < mutants)?;
            population.push(child);
        }
    }

    let best = population.swap_remove(0);
    Ok(SearchResult {
        best_config: best.config,
        best_score: best.score,
        best_peak_items: best.peak,
        history,
        evaluations: s.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub constraint_items: u64,
    pub outcome: Result<SearchResult, SearchError>,
}

/// One search per constraint, all with the same parameters. Infeasible
/// points are recorded and the sweep moves on.
pub fn sweep<P: ScorePredictor + ?Sized>(
    space: &SupernetSpace,
    constraints: &[u64],
    predictor: &P,
    params: &SearchParams,
) -> Result<Vec<SweepPoint>, SearchError> {
    if constraints.windows(2).any(|w| w[0] > w[1]) {
        return Err(SearchError::InvalidParams("constraints must be sorted ascending".into()));
    }
    params.validate()?;
    let mut points = Vec::with_capacity(constraints.len());
    for &c in constraints {
        let outcome = match search(space, &SearchConstraint::new(c), predictor, params) {
            Err(e @ SearchError::Infeasible { .. }) => Err(e),
            Err(e) => return Err(e),
            ok => ok,
        };
        points.push(SweepPoint {
            constraint_items: c,
            outcome,
        });
    }
    Ok(points)
}

/// Columns constraint_items, best_score, best_peak_items, evaluations;
/// infeasible points leave the best_* cells empty.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["constraint_items", "best_score", "best_peak_items", "evaluations"])?;
    for p in points {
        match &p.outcome {
            Ok(r) => w.write_record([
                p.constraint_items.to_string(),
                r.best_score.to_string(),
                r.best_peak_items.to_string(),
                r.evaluations.to_string(),
            ])?,
            Err(_) => w.write_record([p.constraint_items.to_string(), String::new(), String::new(), "0".into()])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::SyntheticOracle;

    fn space() -> SupernetSpace {
        SupernetSpace::moofa()
    }

    fn small_params(seed: u64) -> SearchParams {
        SearchParams {
            population: 30,
            generations: 10,
            seed,
            ..SearchParams::default()
        }
    }

    #[test]
    fn vacuous_and_impossible_bounds() {
        let sp = space();
        let mut rng = rng_from_seed(0);
        for _ in 0..50 {
            let c = sample_uniform_with(&mut rng, &sp);
            assert!(feasible(&c, &sp, &SearchConstraint::new(1_000_000_000)).unwrap());
            assert!(!feasible(&c, &sp, &SearchConstraint::new(1)).unwrap());
        }
    }

    #[test]
    fn feasibility_threshold_is_inclusive() {
        let sp = space();
        let c = sp.minimal_config();
        let peak = constrained_peak(&c, &sp, &SearchConstraint::new(1)).unwrap();
        assert!(feasible(&c, &sp, &SearchConstraint::new(peak)).unwrap());
        assert!(!feasible(&c, &sp, &SearchConstraint::new(peak - 1)).unwrap());
    }

    #[test]
    fn classifier_flag_changes_peak() {
        let sp = space();
        let c = sp.minimal_config();
        let with = SearchConstraint {
            max_peak_items: 1,
            exclude_classifier: false,
        };
        let a = constrained_peak(&c, &sp, &SearchConstraint::new(1)).unwrap();
        let b = constrained_peak(&c, &sp, &with).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn param_validation() {
        let bad = [
            SearchParams {
                population: 1,
                ..SearchParams::default()
            },
            SearchParams {
                parent_fraction: 1.0,
                ..SearchParams::default()
            },
            SearchParams {
                mutation_fraction: 0.0,
                ..SearchParams::default()
            },
            SearchParams {
                generations: 0,
                ..SearchParams::default()
            },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(SearchError::InvalidParams(_))));
        }
        assert!(SearchParams::default().validate().is_ok());
    }

    #[test]
    fn infeasible_reports_tightest_peak() {
        let sp = space();
        let params = SearchParams {
            sample_budget: 500,
            ..small_params(1)
        };
        let err = search(&sp, &SearchConstraint::new(1000), &SyntheticOracle::noiseless(), &params).unwrap_err();
        match err {
            SearchError::Infeasible {
                attempts, tightest_peak, ..
            } => {
                assert_eq!(attempts, 500);
                let min = constrained_peak(&sp.minimal_config(), &sp, &SearchConstraint::new(1)).unwrap();
                assert!(tightest_peak >= min);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loose_constraint_finds_maximal() {
        let sp = space();
        let r = search(&sp, &SearchConstraint::new(10_000_000), &SyntheticOracle::noiseless(), &SearchParams::default()).unwrap();
        assert_eq!(r.best_config.active_genes(), sp.maximal_config().active_genes());
    }

    #[test]
    fn history_elitist_and_result_consistent() {
        let sp = space();
        let oracle = SyntheticOracle::noiseless();
        let params = small_params(4);
        let constraint = SearchConstraint::new(350_000);
        let r = search(&sp, &constraint, &oracle, &params).unwrap();
        assert_eq!(r.history.len(), params.generations);
        for w in r.history.windows(2) {
            assert!(w[1].best_score >= w[0].best_score);
        }
        assert!(r.best_peak_items <= 350_000);
        assert_eq!(r.best_peak_items, constrained_peak(&r.best_config, &sp, &constraint).unwrap());
        assert_eq!(r.best_score, oracle.score(&r.best_config, &sp).unwrap());
        assert_eq!(r.best_score, r.history.last().unwrap().best_score);
        let parents = params.parent_count();
        assert_eq!(r.evaluations, params.population + (params.generations - 1) * (params.population - parents));
    }

    #[test]
    fn deterministic_given_seed() {
        let sp = space();
        let oracle = SyntheticOracle::new(2);
        let c = SearchConstraint::new(400_000);
        let a = search(&sp, &c, &oracle, &small_params(9)).unwrap();
        let b = search(&sp, &c, &oracle, &small_params(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_monotone_and_csv() {
        let sp = space();
        let oracle = SyntheticOracle::noiseless();
        let points = sweep(&sp, &[1000, 400_000, 800_000], &oracle, &SearchParams {
            sample_budget: 20_000,
            ..small_params(5)
        })
        .unwrap();
        assert!(matches!(points[0].outcome, Err(SearchError::Infeasible { .. })));
        let a = points[1].outcome.as_ref().unwrap();
        let b = points[2].outcome.as_ref().unwrap();
        assert!(a.best_peak_items <= 400_000 && b.best_peak_items <= 800_000);
        let mut buf = Vec::new();
        write_sweep_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "constraint_items,best_score,best_peak_items,evaluations");
        assert!(lines[1].starts_with("1000,,,"));
        assert!(sweep(&sp, &[5, 1], &oracle, &small_params(0)).is_err());
    }
}
