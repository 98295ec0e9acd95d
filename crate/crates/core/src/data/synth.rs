use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::corpus::{EntityTargets, Utterance};
use crate::error::{Error, Result};
use crate::model::parse_key_values;
use crate::model::config::parse_value;
use crate::numerics::{mix, Rng, Tensor};

/// Knobs from which a [`SyntheticTaskSpec`] is materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParams {
    /// Regular source tokens.
    pub src_vocab: usize,
    /// Regular target tokens (entity targets are appended after these).
    pub tgt_vocab: usize,
    pub swap_prob: f64,
    pub repeat_min: usize,
    pub repeat_max: usize,
    pub noise_std: f64,
    pub feature_dim: usize,
    /// Random target substitutions applied to speech-corpus targets.
    pub label_noise: f64,
    pub num_entities: usize,
    /// Probability that an MT sentence carries an entity.
    pub entity_rate: f64,
    /// Guaranteed MT-corpus occurrences of every entity.
    pub min_entity_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Seeds the substitution map, entities and acoustic prototypes.
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            src_vocab: 16,
            tgt_vocab: 20,
            swap_prob: 0.1,
            repeat_min: 4,
            repeat_max: 8,
            noise_std: 0.3,
            feature_dim: 16,
            label_noise: 0.0,
            num_entities: 4,
            entity_rate: 0.5,
            min_entity_count: 5,
            min_len: 3,
            max_len: 12,
            seed: 1,
        }
    }
}

impl TaskParams {
    /// Sets one field from its text form. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "src_vocab" => self.src_vocab = parse_value(key, value)?,
            "tgt_vocab" => self.tgt_vocab = parse_value(key, value)?,
            "swap_prob" => self.swap_prob = parse_value(key, value)?,
            "repeat_min" => self.repeat_min = parse_value(key, value)?,
            "repeat_max" => self.repeat_max = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "label_noise" => self.label_noise = parse_value(key, value)?,
            "num_entities" => self.num_entities = parse_value(key, value)?,
            "entity_rate" => self.entity_rate = parse_value(key, value)?,
            "min_entity_count" => self.min_entity_count = parse_value(key, value)?,
            "min_len" => self.min_len = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "src_vocab={}", self.src_vocab);
        let _ = writeln!(s, "tgt_vocab={}", self.tgt_vocab);
        let _ = writeln!(s, "swap_prob={}", self.swap_prob);
        let _ = writeln!(s, "repeat_min={}", self.repeat_min);
        let _ = writeln!(s, "repeat_max={}", self.repeat_max);
        let _ = writeln!(s, "noise_std={}", self.noise_std);
        let _ = writeln!(s, "feature_dim={}", self.feature_dim);
        let _ = writeln!(s, "label_noise={}", self.label_noise);
        let _ = writeln!(s, "num_entities={}", self.num_entities);
        let _ = writeln!(s, "entity_rate={}", self.entity_rate);
        let _ = writeln!(s, "min_entity_count={}", self.min_entity_count);
        let _ = writeln!(s, "min_len={}", self.min_len);
        let _ = writeln!(s, "max_len={}", self.max_len);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Parses `key=value` text over the defaults; unknown keys are rejected.
    pub fn from_kv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut p = Self::default();
        for (line, key, value) in parse_key_values(text, origin)? {
            if !p.set(&key, &value)? {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    msg: format!("unknown key {key:?}"),
                });
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.src_vocab < 2 || self.tgt_vocab < 2 {
            return bad("vocabularies need at least 2 tokens");
        }
        if self.repeat_min < 2 || self.repeat_max < self.repeat_min {
            return bad("need 2 <= repeat_min <= repeat_max");
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.num_entities > 0 && self.max_len < 2 {
            return bad("entities need max_len >= 2");
        }
        for (name, p) in [
            ("swap_prob", self.swap_prob),
            ("label_noise", self.label_noise),
            ("entity_rate", self.entity_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.noise_std < 0.0 || self.feature_dim == 0 {
            return bad("noise_std must be >= 0 and feature_dim >= 1");
        }
        Ok(())
    }
}

/// A context token followed by a head token. Context tokens translate as
/// usual; the head translates to a dedicated target sequence that no regular
/// source token maps to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Materialized synthetic translation task.
#[derive(Clone, Debug)]
pub struct SyntheticTaskSpec {
    pub params: TaskParams,
    /// Target units for each source token; each has 1 or 2 tokens.
    pub substitution: Vec<Vec<usize>>,
    pub entities: Vec<Entity>,
}

impl SyntheticTaskSpec {
    pub fn new(params: TaskParams) -> Result<Self> {
        params.validate()?;
        let mut rng = Rng::new(mix(params.seed, 0x5eed_0001));
        let substitution = (0..params.src_vocab)
            .map(|_| {
                let n = 1 + usize::from(rng.bernoulli(0.3));
                (0..n).map(|_| rng.below(params.tgt_vocab)).collect()
            })
            .collect();
        let mut entities = Vec::with_capacity(params.num_entities);
        let mut used = HashSet::new();
        let mut next_tgt = params.tgt_vocab;
        while entities.len() < params.num_entities {
            let a = rng.below(params.src_vocab);
            let b = rng.below(params.src_vocab);
            if a == b || !used.insert((a, b)) {
                continue;
            }
            let len = 1 + usize::from(rng.bernoulli(0.5));
            let tgt = (next_tgt..next_tgt + len).collect();
            next_tgt += len;
            entities.push(Entity { src: vec![a, b], tgt });
        }
        Ok(Self {
            params,
            substitution,
            entities,
        })
    }

    /// Identity-map task used for checks: token `i` translates to `i`.
    pub fn identity(src_vocab: usize) -> Self {
        let params = TaskParams {
            src_vocab,
            tgt_vocab: src_vocab,
            swap_prob: 0.0,
            num_entities: 0,
            ..TaskParams::default()
        };
        Self {
            substitution: (0..src_vocab).map(|i| vec![i]).collect(),
            entities: vec![],
            params,
        }
    }

    pub fn src_vocab_size(&self) -> usize {
        self.params.src_vocab
    }

    /// Regular plus entity target tokens.
    pub fn tgt_vocab_size(&self) -> usize {
        self.params.tgt_vocab + self.entities.iter().map(|e| e.tgt.len()).sum::<usize>()
    }

    pub fn feature_dim(&self) -> usize {
        self.params.feature_dim
    }

    /// Fixed acoustic prototype of a source token.
    pub fn prototype(&self, token: usize) -> Vec<f64> {
        let mut rng = Rng::new(mix(mix(self.params.seed, 0xfea7), token as u64));
        (0..self.params.feature_dim).map(|_| rng.normal()).collect()
    }

    /// Index of the entity whose phrase starts at `src[i]`, if any.
    pub fn entity_at(&self, src: &[usize], i: usize) -> Option<usize> {
        self.entities
            .iter()
            .position(|e| src.len() >= i + e.src.len() && src[i..i + e.src.len()] == e.src[..])
    }

    pub fn contains_entity(&self, src: &[usize]) -> bool {
        (0..src.len()).any(|i| self.entity_at(src, i).is_some())
    }

    /// Target units of `src` before reordering.
    pub fn translate_units(&self, src: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut units = Vec::new();
        let mut found = Vec::new();
        let mut i = 0;
        while i < src.len() {
            if let Some(e) = self.entity_at(src, i) {
                let phrase = &self.entities[e].src;
                for &ctx in &phrase[..phrase.len() - 1] {
                    units.push(self.substitution[ctx].clone());
                }
                units.push(self.entities[e].tgt.clone());
                found.push(e);
                i += phrase.len();
            } else {
                units.push(self.substitution[src[i]].clone());
                i += 1;
            }
        }
        (units, found)
    }

    fn sample_plain_source(&self, rng: &mut Rng, len: usize) -> Vec<usize> {
        loop {
            let src: Vec<usize> = (0..len).map(|_| rng.below(self.params.src_vocab)).collect();
            if !self.contains_entity(&src) {
                return src;
            }
        }
    }
}

/// Swaps adjacent units left to right: each eligible position swaps with
/// `swap_prob` (and then skips its partner). Returns the number of swaps.
pub fn apply_swaps<T>(units: &mut [T], swap_prob: f64, rng: &mut Rng) -> usize {
    let mut swaps = 0;
    let mut i = 0;
    while i + 1 < units.len() {
        if rng.bernoulli(swap_prob) {
            units.swap(i, i + 1);
            swaps += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    swaps
}

/// Entity-free source/target pair of length `min_len..=max_len`.
pub fn gen_pair(rng: &mut Rng, spec: &SyntheticTaskSpec) -> (Vec<usize>, Vec<usize>) {
    let len = rng.range_inclusive(spec.params.min_len, spec.params.max_len);
    let src = spec.sample_plain_source(rng, len);
    let (mut units, _) = spec.translate_units(&src);
    apply_swaps(&mut units, spec.params.swap_prob, rng);
    (src, units.concat())
}

/// Pair carrying exactly one entity phrase (`which`, or a random one);
/// also returns the entity index.
pub fn gen_entity_pair(
    rng: &mut Rng,
    spec: &SyntheticTaskSpec,
    which: Option<usize>,
) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    if spec.entities.is_empty() {
        return Err(Error::Config("task has no entities".into()));
    }
    if which.is_some_and(|e| e >= spec.entities.len()) {
        return Err(Error::Usage("entity index out of range".into()));
    }
    loop {
        let e = which.unwrap_or_else(|| rng.below(spec.entities.len()));
        let phrase = &spec.entities[e].src;
        let len = rng.range_inclusive(spec.params.min_len.max(phrase.len()), spec.params.max_len);
        let rest = spec.sample_plain_source(rng, len - phrase.len());
        let at = rng.range_inclusive(0, rest.len());
        let src: Vec<usize> = rest[..at]
            .iter()
            .chain(phrase)
            .chain(&rest[at..])
            .copied()
            .collect();
        let (mut units, found) = spec.translate_units(&src);
        if found != [e] {
            continue;
        }
        apply_swaps(&mut units, spec.params.swap_prob, rng);
        return Ok((src, units.concat(), e));
    }
}

/// Prototype frames of each token repeated `repeat_min..=repeat_max` times, plus noise.
pub fn synth_features(src_tokens: &[usize], rng: &mut Rng, spec: &SyntheticTaskSpec) -> Result<Tensor> {
    let dim = spec.feature_dim();
    let mut data = Vec::new();
    let mut frames = 0;
    for &t in src_tokens {
        if t >= spec.src_vocab_size() {
            return Err(Error::Usage(format!("source token {t} out of range")));
        }
        let proto = spec.prototype(t);
        let reps = rng.range_inclusive(spec.params.repeat_min, spec.params.repeat_max);
        for _ in 0..reps {
            data.extend(proto.iter().map(|p| p + spec.params.noise_std * rng.normal()));
        }
        frames += reps;
    }
    Tensor::matrix(frames, dim, data)
}

fn id_hash(id: &str) -> u64 {
    // FNV-1a
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Regenerates an utterance's features from its id and source tokens.
pub fn utterance_features(utt: &Utterance, spec: &SyntheticTaskSpec, seed: u64) -> Result<Tensor> {
    let mut rng = Rng::new(mix(seed, id_hash(&utt.id)));
    synth_features(&utt.src_tokens, &mut rng, spec)
}

/// Speech corpus (entity-free, pseudo-label noise), MT corpus (entities at
/// `entity_rate`, clean targets) and a held-out entity test set.
#[derive(Clone, Debug, Default)]
pub struct Corpora {
    pub speech: Vec<Utterance>,
    pub mt: Vec<Utterance>,
    pub mt_entities: EntityTargets,
    pub test: Vec<Utterance>,
    pub test_entities: EntityTargets,
}

fn noisy_labels(tgt: &[usize], rate: f64, regular: usize, rng: &mut Rng) -> Vec<usize> {
    tgt.iter()
        .map(|&t| if rng.bernoulli(rate) { rng.below(regular) } else { t })
        .collect()
}

pub fn generate_corpora(
    spec: &SyntheticTaskSpec,
    seed: u64,
    n_speech: usize,
    n_mt: usize,
    n_test: usize,
) -> Result<Corpora> {
    if n_speech == 0 {
        return Err(Error::Config("speech corpus must not be empty".into()));
    }
    let root = Rng::new(seed);
    let mut out = Corpora::default();

    let mut rng = root.fork(1);
    for i in 0..n_speech {
        let (src, tgt) = gen_pair(&mut rng, spec);
        let tgt = noisy_labels(&tgt, spec.params.label_noise, spec.params.tgt_vocab, &mut rng);
        out.speech.push(Utterance::new(format!("sp{i:06}"), src, tgt));
    }

    let forced = spec.entities.len() * spec.params.min_entity_count;
    if n_mt < forced {
        return Err(Error::Config(format!(
            "MT corpus of {n_mt} cannot hold {forced} guaranteed entity sentences"
        )));
    }
    let mut rng = root.fork(2);
    for i in 0..n_mt {
        let id = format!("mt{i:06}");
        let which = (i < forced).then(|| i % spec.entities.len());
        if which.is_some() || (!spec.entities.is_empty() && rng.bernoulli(spec.params.entity_rate)) {
            let (src, tgt, e) = gen_entity_pair(&mut rng, spec, which)?;
            out.mt_entities.push((id.clone(), vec![spec.entities[e].tgt.clone()]));
            out.mt.push(Utterance::new(id, src, tgt));
        } else {
            let (src, tgt) = gen_pair(&mut rng, spec);
            out.mt.push(Utterance::new(id, src, tgt));
        }
    }

    let mut rng = root.fork(3);
    for i in 0..n_test {
        let id = format!("ts{i:06}");
        if spec.entities.is_empty() {
            let (src, tgt) = gen_pair(&mut rng, spec);
            out.test.push(Utterance::new(id, src, tgt));
        } else {
            let (src, tgt, e) = gen_entity_pair(&mut rng, spec, None)?;
            out.test_entities.push((id.clone(), vec![spec.entities[e].tgt.clone()]));
            out.test.push(Utterance::new(id, src, tgt));
        }
    }
    Ok(out)
}
