//! Mixed-precision search over per-layer bit-widths.
//!
//! A genetic algorithm evolves genomes from the allele set {16, 8, 4, 2}
//! using the accuracy-gated index as fitness: per generation the population
//! is evaluated (memoized), sorted, the top-K elites carry over unchanged,
//! and the remainder is refilled with uniform-crossover children of
//! roulette-selected parents, each child mutated at one random locus with
//! probability mu. An exhaustive enumerator doubles as the verification
//! oracle for small manifolds.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{measure_latency, BenchError, TimingProtocol};
use crate::data::Dataset;
use crate::metrics::{refined_index, MetricError, MetricPoint};
use crate::model::{evaluate_accuracy, NetworkDef, Tensor, WeightStore};
use crate::quant::{
    apply_quantization, compression_ratio, CalibrationStats, CompressionMode, QuantConfig,
    QuantError,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("population must exceed the elite count (population {population}, elites {elites})")]
    EliteTooLarge { population: usize, elites: usize },
    #[error("mutation probability must lie in [0,1], got {0}")]
    BadMutation(f64),
    #[error("search space needs at least one layer and one allele")]
    EmptySpace,
    #[error("manifold of {size} genomes exceeds the exhaustive guard of {guard}")]
    ManifoldTooLarge { size: u128, guard: u128 },
    #[error("evaluator failed on genome {genome}: {source}")]
    Evaluator {
        genome: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One candidate assignment: a bit-width per quantizable layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genome {
    pub per_layer_bits: Vec<u8>,
}

impl Genome {
    pub fn mean_bits(&self) -> f64 {
        self.per_layer_bits.iter().map(|&b| f64::from(b)).sum::<f64>()
            / self.per_layer_bits.len() as f64
    }

    pub fn to_config(&self) -> Result<QuantConfig, QuantError> {
        QuantConfig::new(self.per_layer_bits.clone())
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.per_layer_bits.iter().map(|b| b.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// The discrete manifold the search walks: `alleles^layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: usize,
    pub alleles: Vec<u8>,
}

impl SearchSpace {
    pub fn new(layers: usize, alleles: Vec<u8>) -> Result<Self, SearchError> {
        if layers == 0 || alleles.is_empty() {
            return Err(SearchError::EmptySpace);
        }
        Ok(Self { layers, alleles })
    }

    /// Default manifold: {16, 8, 4, 2} per layer.
    pub fn standard(layers: usize) -> Result<Self, SearchError> {
        Self::new(layers, vec![16, 8, 4, 2])
    }

    pub fn size(&self) -> u128 {
        (self.alleles.len() as u128).pow(self.layers as u32)
    }

    fn random_genome(&self, rng: &mut ChaCha8Rng) -> Genome {
        let per_layer_bits = (0..self.layers)
            .map(|_| self.alleles[rng.random_range(0..self.alleles.len())])
            .collect();
        Genome { per_layer_bits }
    }
}

/// Genetic-algorithm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaParams {
    pub population_n: usize,
    pub generations_g: usize,
    pub mutation_mu: f64,
    pub elite_k: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population_n: 20,
            generations_g: 30,
            mutation_mu: 0.15,
            elite_k: 5,
            seed: 0,
        }
    }
}

impl GaParams {
    fn validate(&self) -> Result<(), SearchError> {
        if self.elite_k >= self.population_n || self.population_n == 0 {
            return Err(SearchError::EliteTooLarge {
                population: self.population_n,
                elites: self.elite_k,
            });
        }
        if !(0.0..=1.0).contains(&self.mutation_mu) {
            return Err(SearchError::BadMutation(self.mutation_mu));
        }
        Ok(())
    }
}

/// Raw measurements an evaluator supplies for one genome. Fitness is
/// always derived from these through the gated index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessParts {
    pub compression_c: f64,
    pub accuracy_p: f64,
    pub latency_t_ms: f64,
}

/// Supplies `(C, P, T)` for a genome. Implementations must be
/// deterministic for a fixed genome within a run; the search memoizes per
/// genome, so each distinct genome is evaluated exactly once.
pub trait FitnessEvaluator {
    fn evaluate(&mut self, genome: &Genome) -> Result<FitnessParts, SearchError>;
}

/// The gated index of an evaluator's measurements.
pub fn fitness_from_parts(parts: FitnessParts, thresh: f64) -> Result<f64, SearchError> {
    let point = MetricPoint::new("genome", parts.accuracy_p, parts.compression_c, parts.latency_t_ms)?;
    Ok(refined_index(&point, thresh)?)
}

struct Memo<'a, E: FitnessEvaluator + ?Sized> {
    evaluator: &'a mut E,
    thresh: f64,
    cache: HashMap<Genome, (f64, FitnessParts)>,
    evaluations: usize,
}

impl<'a, E: FitnessEvaluator + ?Sized> Memo<'a, E> {
    fn fitness(&mut self, genome: &Genome) -> Result<(f64, FitnessParts), SearchError> {
        if let Some(&hit) = self.cache.get(genome) {
            return Ok(hit);
        }
        let parts = self.evaluator.evaluate(genome)?;
        let fitness = fitness_from_parts(parts, self.thresh)?;
        self.cache.insert(genome.clone(), (fitness, parts));
        self.evaluations += 1;
        Ok((fitness, parts))
    }
}

/// One generation's evaluated population, for the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub population: Vec<String>,
    pub fitness: Vec<f64>,
    pub elites: Vec<String>,
    pub best_genome: String,
    pub best_fitness: f64,
}

/// Full search trajectory plus the returned optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchLog {
    pub params: GaParams,
    pub space: SearchSpace,
    pub thresh: f64,
    pub generations: Vec<GenerationLog>,
    pub distinct_evaluations: usize,
    pub best_genome: String,
    pub best_fitness: f64,
    pub best_parts: FitnessParts,
}

/// Outcome of a GA run.
#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Genome,
    pub best_fitness: f64,
    pub best_parts: FitnessParts,
    pub log: SearchLog,
}

fn roulette_pick(rng: &mut ChaCha8Rng, fitness: &[f64], total: f64) -> usize {
    if total <= 0.0 {
        // an all-gated population carries no selection signal; fall back
        // to a uniform draw
        return rng.random_range(0..fitness.len());
    }
    let mut r = rng.random::<f64>() * total;
    for (i, &f) in fitness.iter().enumerate() {
        r -= f;
        if r <= 0.0 {
            return i;
        }
    }
    fitness.len() - 1
}

fn uniform_crossover(rng: &mut ChaCha8Rng, a: &Genome, b: &Genome) -> Genome {
    let per_layer_bits = a
        .per_layer_bits
        .iter()
        .zip(&b.per_layer_bits)
        .map(|(&ga, &gb)| if rng.random_bool(0.5) { ga } else { gb })
        .collect();
    Genome { per_layer_bits }
}

fn mutate_one_locus(rng: &mut ChaCha8Rng, genome: &mut Genome, space: &SearchSpace) {
    let locus = rng.random_range(0..genome.per_layer_bits.len());
    genome.per_layer_bits[locus] = space.alleles[rng.random_range(0..space.alleles.len())];
}

/// Run the genetic search and return the argmax over the final population
/// together with the full trajectory.
///
/// Deterministic for fixed `(params, space, evaluator)`.
pub fn run_ga<E: FitnessEvaluator + ?Sized>(
    params: &GaParams,
    space: &SearchSpace,
    evaluator: &mut E,
    thresh: f64,
) -> Result<GaOutcome, SearchError> {
    params.validate()?;
    if space.layers == 0 || space.alleles.is_empty() {
        return Err(SearchError::EmptySpace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut memo = Memo {
        evaluator,
        thresh,
        cache: HashMap::new(),
        evaluations: 0,
    };

    let mut population: Vec<Genome> = (0..params.population_n)
        .map(|_| space.random_genome(&mut rng))
        .collect();
    let mut generations = Vec::with_capacity(params.generations_g + 1);

    let evaluate_sorted =
        |population: &[Genome], memo: &mut Memo<'_, E>| -> Result<Vec<(Genome, f64)>, SearchError> {
            let mut scored = Vec::with_capacity(population.len());
            for genome in population {
                let (fitness, _) = memo.fitness(genome)?;
                scored.push((genome.clone(), fitness));
            }
            // descending fitness; ties keep the wider-bits genome first
            scored.sort_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| b.0.mean_bits().total_cmp(&a.0.mean_bits()))
            });
            Ok(scored)
        };

    for generation in 0..params.generations_g {
        let scored = evaluate_sorted(&population, &mut memo)?;
        let elites: Vec<Genome> = scored.iter().take(params.elite_k).map(|(g, _)| g.clone()).collect();
        generations.push(GenerationLog {
            generation,
            population: scored.iter().map(|(g, _)| g.to_string()).collect(),
            fitness: scored.iter().map(|(_, f)| *f).collect(),
            elites: elites.iter().map(Genome::to_string).collect(),
            best_genome: scored[0].0.to_string(),
            best_fitness: scored[0].1,
        });

        let fitness: Vec<f64> = scored.iter().map(|(_, f)| *f).collect();
        let total: f64 = fitness.iter().sum();
        let mut next = elites;
        while next.len() < params.population_n {
            let p1 = &scored[roulette_pick(&mut rng, &fitness, total)].0;
            let p2 = &scored[roulette_pick(&mut rng, &fitness, total)].0;
            let mut child = uniform_crossover(&mut rng, p1, p2);
            if rng.random::<f64>() < params.mutation_mu {
                mutate_one_locus(&mut rng, &mut child, space);
            }
            next.push(child);
        }
        population = next;
    }

    // the returned optimum is the argmax over the final population
    let scored = evaluate_sorted(&population, &mut memo)?;
    let (best, best_fitness) = scored[0].clone();
    let (_, best_parts) = memo.fitness(&best)?;
    generations.push(GenerationLog {
        generation: params.generations_g,
        population: scored.iter().map(|(g, _)| g.to_string()).collect(),
        fitness: scored.iter().map(|(_, f)| *f).collect(),
        elites: scored.iter().take(params.elite_k).map(|(g, _)| g.to_string()).collect(),
        best_genome: best.to_string(),
        best_fitness,
    });

    let log = SearchLog {
        params: *params,
        space: space.clone(),
        thresh,
        generations,
        distinct_evaluations: memo.evaluations,
        best_genome: best.to_string(),
        best_fitness,
        best_parts,
    };
    Ok(GaOutcome {
        best,
        best_fitness,
        best_parts,
        log,
    })
}

/// Guard for [`exhaustive_search`].
pub const EXHAUSTIVE_GUARD: u128 = 65_536;

/// Evaluate every genome in the manifold. Returns the global argmax (ties
/// broken toward higher mean bit-width) and the full fitness table.
pub fn exhaustive_search<E: FitnessEvaluator + ?Sized>(
    space: &SearchSpace,
    evaluator: &mut E,
    thresh: f64,
) -> Result<(Genome, f64, Vec<(Genome, f64)>), SearchError> {
    let size = space.size();
    if size > EXHAUSTIVE_GUARD {
        return Err(SearchError::ManifoldTooLarge { size, guard: EXHAUSTIVE_GUARD });
    }
    let mut table = Vec::with_capacity(size as usize);
    let mut indices = vec![0usize; space.layers];
    loop {
        let genome = Genome {
            per_layer_bits: indices.iter().map(|&i| space.alleles[i]).collect(),
        };
        let parts = evaluator.evaluate(&genome)?;
        let fitness = fitness_from_parts(parts, thresh)?;
        table.push((genome, fitness));

        // odometer increment over the manifold
        let mut pos = space.layers;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < space.alleles.len() {
                break;
            }
            indices[pos] = 0;
        }
        if indices.iter().all(|&i| i == 0) {
            break;
        }
    }
    let (best, best_fitness) = table
        .iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| a.0.mean_bits().total_cmp(&b.0.mean_bits()))
        })
        .cloned()
        .expect("manifold is nonempty");
    Ok((best, best_fitness, table))
}

/// Latency source for [`ModelEvaluator`].
pub enum LatencySource {
    /// Measure each genome's quantized model once with this protocol.
    Measure(TimingProtocol),
    /// Use a fixed surrogate latency for every genome, removing timing
    /// noise from the fitness landscape.
    Fixed(f64),
}

/// Fitness evaluator backed by the real quantization pipeline: calibrated
/// ranges are shared across genomes, compression is the unweighted
/// bit-width mean, accuracy comes from the supplied evaluation set.
pub struct ModelEvaluator<'a> {
    pub net: &'a NetworkDef,
    pub weights: &'a WeightStore,
    pub stats: &'a CalibrationStats,
    pub eval_set: &'a Dataset,
    pub eval_batch: usize,
    pub latency: LatencySource,
    latency_input: Option<Tensor>,
}

impl<'a> ModelEvaluator<'a> {
    pub fn new(
        net: &'a NetworkDef,
        weights: &'a WeightStore,
        stats: &'a CalibrationStats,
        eval_set: &'a Dataset,
        eval_batch: usize,
        latency: LatencySource,
    ) -> Self {
        Self {
            net,
            weights,
            stats,
            eval_set,
            eval_batch,
            latency,
            latency_input: None,
        }
    }

    fn wrap<Err>(genome: &Genome) -> impl FnOnce(Err) -> SearchError + '_
    where
        Err: std::error::Error + Send + Sync + 'static,
    {
        move |source| SearchError::Evaluator {
            genome: genome.to_string(),
            source: Box::new(source),
        }
    }
}

impl FitnessEvaluator for ModelEvaluator<'_> {
    fn evaluate(&mut self, genome: &Genome) -> Result<FitnessParts, SearchError> {
        let config = genome.to_config().map_err(Self::wrap(genome))?;
        let compression_c = compression_ratio(&config, CompressionMode::Geometric, None)
            .map_err(Self::wrap(genome))?;
        let model = apply_quantization(self.net, self.weights, &config, self.stats)
            .map_err(Self::wrap(genome))?;
        let accuracy_p = evaluate_accuracy(&model, self.eval_set, self.eval_batch)
            .map_err(Self::wrap(genome))?;
        let latency_t_ms = match &self.latency {
            LatencySource::Fixed(t) => *t,
            LatencySource::Measure(protocol) => {
                let input = self
                    .latency_input
                    .get_or_insert_with(|| self.eval_set.batch(0, protocol.batch_size));
                measure_latency(&model, protocol, input)
                    .map_err(Self::wrap::<BenchError>(genome))?
                    .median_ms
            }
        };
        Ok(FitnessParts {
            compression_c,
            accuracy_p,
            latency_t_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic surrogate: accuracy decays with distance from a
    /// target genome, latency fixed, compression geometric.
    pub(super) struct Surrogate {
        pub target: Genome,
        pub calls: usize,
    }

    impl FitnessEvaluator for Surrogate {
        fn evaluate(&mut self, genome: &Genome) -> Result<FitnessParts, SearchError> {
            self.calls += 1;
            let mismatch = genome
                .per_layer_bits
                .iter()
                .zip(&self.target.per_layer_bits)
                .filter(|(a, b)| a != b)
                .count();
            let accuracy_p = (0.95 - 0.17 * mismatch as f64).max(0.01);
            let config = QuantConfig::new(genome.per_layer_bits.clone()).unwrap();
            let compression_c =
                compression_ratio(&config, CompressionMode::Geometric, None).unwrap();
            Ok(FitnessParts {
                compression_c,
                accuracy_p,
                latency_t_ms: 1.0,
            })
        }
    }

    fn target() -> Genome {
        Genome { per_layer_bits: vec![8, 4, 16, 2] }
    }

    #[test]
    fn gate_zeroes_fitness() {
        let parts = FitnessParts { compression_c: 8.0, accuracy_p: 0.4, latency_t_ms: 1.0 };
        assert_eq!(fitness_from_parts(parts, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn fitness_matches_hand_computed_index() {
        let parts = FitnessParts { compression_c: 32.0 / 7.0, accuracy_p: 0.7502, latency_t_ms: 1.24 };
        let f = fitness_from_parts(parts, 0.4981).unwrap();
        let expected = (32.0 / 7.0) * (0.7502 - 0.4981) / (2.24f64).log2();
        assert!((f - expected).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_enumerates_exactly() {
        let space = SearchSpace::standard(4).unwrap();
        let mut s = Surrogate { target: target(), calls: 0 };
        let (_, _, table) = exhaustive_search(&space, &mut s, 0.3).unwrap();
        assert_eq!(table.len(), 256);
        assert_eq!(s.calls, 256);
    }

    #[test]
    fn exhaustive_single_layer() {
        let space = SearchSpace::new(1, vec![16, 8, 4, 2]).unwrap();
        let mut s = Surrogate { target: Genome { per_layer_bits: vec![4] }, calls: 0 };
        let (best, best_fitness, table) = exhaustive_search(&space, &mut s, 0.3).unwrap();
        assert_eq!(table.len(), 4);
        // best by direct comparison over the four alleles
        let expected = table
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best, expected.0);
        assert_eq!(best_fitness, expected.1);
    }

    #[test]
    fn exhaustive_guard_refuses_large_manifolds() {
        let space = SearchSpace::new(9, vec![16, 8, 4, 2]).unwrap();
        let mut s = Surrogate { target: target(), calls: 0 };
        assert!(matches!(
            exhaustive_search(&space, &mut s, 0.3),
            Err(SearchError::ManifoldTooLarge { .. })
        ));
    }

    #[test]
    fn single_allele_space_terminates() {
        let space = SearchSpace::new(3, vec![8]).unwrap();
        let mut s = Surrogate { target: Genome { per_layer_bits: vec![8, 8, 8] }, calls: 0 };
        let params = GaParams { population_n: 4, generations_g: 3, elite_k: 1, ..Default::default() };
        let out = run_ga(&params, &space, &mut s, 0.3).unwrap();
        assert_eq!(out.best.per_layer_bits, vec![8, 8, 8]);
        // only one distinct genome exists, so memoization collapses to one call
        assert_eq!(s.calls, 1);
    }

    #[test]
    fn ga_is_deterministic() {
        let space = SearchSpace::standard(4).unwrap();
        let params = GaParams { seed: 77, ..Default::default() };
        let mut s1 = Surrogate { target: target(), calls: 0 };
        let mut s2 = Surrogate { target: target(), calls: 0 };
        let a = run_ga(&params, &space, &mut s1, 0.3).unwrap();
        let b = run_ga(&params, &space, &mut s2, 0.3).unwrap();
        assert_eq!(a.best, b.best);
        let ja = serde_json::to_string(&a.log).unwrap();
        let jb = serde_json::to_string(&b.log).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn best_so_far_is_monotone_and_population_constant() {
        let space = SearchSpace::standard(4).unwrap();
        let mut s = Surrogate { target: target(), calls: 0 };
        let params = GaParams { seed: 5, ..Default::default() };
        let out = run_ga(&params, &space, &mut s, 0.3).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for generation in &out.log.generations {
            assert_eq!(generation.population.len(), params.population_n);
            assert!(generation.best_fitness >= prev);
            prev = generation.best_fitness;
        }
    }

    #[test]
    fn crossover_and_mutation_stay_in_allele_set() {
        let space = SearchSpace::standard(4).unwrap();
        let mut s = Surrogate { target: target(), calls: 0 };
        let params = GaParams { seed: 13, mutation_mu: 1.0, ..Default::default() };
        let out = run_ga(&params, &space, &mut s, 0.3).unwrap();
        for generation in &out.log.generations {
            for genome in &generation.population {
                for part in genome.split('-') {
                    let bits: u8 = part.parse().unwrap();
                    assert!(space.alleles.contains(&bits));
                }
            }
        }
    }

    #[test]
    fn all_gated_population_falls_back_to_uniform_selection() {
        struct Gated;
        impl FitnessEvaluator for Gated {
            fn evaluate(&mut self, genome: &Genome) -> Result<FitnessParts, SearchError> {
                let config = QuantConfig::new(genome.per_layer_bits.clone()).unwrap();
                Ok(FitnessParts {
                    compression_c: compression_ratio(&config, CompressionMode::Geometric, None)
                        .unwrap(),
                    accuracy_p: 0.05,
                    latency_t_ms: 1.0,
                })
            }
        }
        let space = SearchSpace::standard(4).unwrap();
        let params = GaParams { seed: 3, generations_g: 5, ..Default::default() };
        let out = run_ga(&params, &space, &mut Gated, 0.5).unwrap();
        assert_eq!(out.best_fitness, 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let space = SearchSpace::standard(4).unwrap();
        let mut s = Surrogate { target: target(), calls: 0 };
        let params = GaParams { population_n: 5, elite_k: 5, ..Default::default() };
        assert!(run_ga(&params, &space, &mut s, 0.3).is_err());
        let params = GaParams { mutation_mu: 1.5, ..Default::default() };
        assert!(run_ga(&params, &space, &mut s, 0.3).is_err());
    }
}
