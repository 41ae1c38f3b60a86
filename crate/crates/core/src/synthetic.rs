//! Deterministic synthetic multi-hop task.
//!
//! A world is a set of typed entities (`film_3`, `person_17`) and relation
//! facts between them. An N-hop example is a chain of N facts: fact 1 links
//! the answer `e_0` to `e_1`, and fact `k ≥ 2` describes `e_{k-1}` through a
//! new entity `e_k`. The 1-hop question asks about `e_1`; every further hop
//! replaces the newest entity mention with a descriptor such as
//! "the film starring person_9".

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::{DatasetRecord, DocumentRecord};
use crate::vocab::{VocabError, Vocabulary};

pub const MAX_HOPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Film,
    Person,
    City,
    Country,
    Company,
}

impl EntityType {
    pub const ALL: [EntityType; 5] = [Self::Film, Self::Person, Self::City, Self::Country, Self::Company];

    pub fn prefix(self) -> &'static str {
        match self {
            Self::Film => "film",
            Self::Person => "person",
            Self::City => "city",
            Self::Country => "country",
            Self::Company => "company",
        }
    }
}

/// Fact sentence, 1-hop question about the subject, and descriptor of the
/// subject through the object. `{s}`/`{o}` are the placeholders.
#[derive(Clone, Copy, Debug)]
pub struct Relation {
    pub name: &'static str,
    pub subject: EntityType,
    pub object: EntityType,
    pub fact: &'static str,
    pub question: &'static str,
    pub descriptor: &'static str,
}

use EntityType::*;

/// The relation table; the type graph is acyclic.
pub const RELATIONS: [Relation; 6] = [
    Relation {
        name: "directed_by",
        subject: Film,
        object: Person,
        fact: "{s} was directed by {o} .",
        question: "who directed {s} ?",
        descriptor: "the film directed by {o}",
    },
    Relation {
        name: "starring",
        subject: Film,
        object: Person,
        fact: "{s} stars {o} .",
        question: "who starred in {s} ?",
        descriptor: "the film starring {o}",
    },
    Relation {
        name: "born_in",
        subject: Person,
        object: City,
        fact: "{s} was born in {o} .",
        question: "where was {s} born ?",
        descriptor: "the person born in {o}",
    },
    Relation {
        name: "located_in",
        subject: City,
        object: Country,
        fact: "{s} is located in {o} .",
        question: "which country is {s} in ?",
        descriptor: "the city located in {o}",
    },
    Relation {
        name: "works_for",
        subject: Person,
        object: Company,
        fact: "{s} works for {o} .",
        question: "which company does {s} work for ?",
        descriptor: "the person working for {o}",
    },
    Relation {
        name: "based_in",
        subject: Company,
        object: City,
        fact: "{s} is based in {o} .",
        question: "where is {s} based ?",
        descriptor: "the company based in {o}",
    },
];

fn fill(template: &str, s: &str, o: &str) -> String {
    template.replace("{s}", s).replace("{o}", o)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorldSizes {
    /// Total entities, assigned to types round-robin.
    pub entities: usize,
    /// Uses the first `relation_types` rows of [`RELATIONS`].
    pub relation_types: usize,
    pub facts_per_relation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub name: String,
    pub kind: EntityType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    pub entities: Vec<Entity>,
    pub facts: Vec<Fact>,
    pub relation_types: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SyntheticError {
    #[error("at most {max} relation types are defined, {0} requested", max = RELATIONS.len())]
    TooManyRelationTypes(usize),
    #[error("hop count {0} outside 1..={MAX_HOPS}")]
    UnsupportedHops(usize),
    #[error("world has no {hops}-hop chains")]
    NoChain { hops: usize },
    #[error("{hops}-hop split needs {required} distinct chains, the world has {available}")]
    InsufficientWorld { hops: usize, required: usize, available: usize },
}

impl World {
    pub fn fact_sentence(&self, f: &Fact) -> String {
        let r = &RELATIONS[f.relation];
        fill(r.fact, &self.entities[f.subject].name, &self.entities[f.object].name)
    }

    pub fn question(&self, f: &Fact) -> String {
        fill(RELATIONS[f.relation].question, &self.entities[f.subject].name, "")
    }

    pub fn descriptor(&self, f: &Fact) -> String {
        fill(RELATIONS[f.relation].descriptor, "", &self.entities[f.object].name)
    }

    fn by_subject(&self) -> HashMap<usize, Vec<usize>> {
        let mut m: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, f) in self.facts.iter().enumerate() {
            m.entry(f.subject).or_default().push(i);
        }
        m
    }
}

/// Random typed facts; each relation gets up to `facts_per_relation`
/// distinct (subject, object) pairs.
pub fn generate_world(seed: u64, sizes: WorldSizes) -> Result<World, SyntheticError> {
    if sizes.relation_types > RELATIONS.len() {
        return Err(SyntheticError::TooManyRelationTypes(sizes.relation_types));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = EntityType::ALL;
    let entities: Vec<Entity> = (0..sizes.entities)
        .map(|i| {
            let kind = types[i % types.len()];
            Entity {
                name: format!("{}_{}", kind.prefix(), i / types.len()),
                kind,
            }
        })
        .collect();
    let of_type = |t: EntityType| -> Vec<usize> { (0..entities.len()).filter(|&i| entities[i].kind == t).collect() };
    let mut facts = Vec::new();
    for (r, rel) in RELATIONS.iter().enumerate().take(sizes.relation_types) {
        let subjects = of_type(rel.subject);
        let objects = of_type(rel.object);
        let mut pairs: Vec<(usize, usize)> = subjects
            .iter()
            .flat_map(|&s| objects.iter().map(move |&o| (s, o)))
            .collect();
        pairs.shuffle(&mut rng);
        if pairs.len() < sizes.facts_per_relation {
            log::warn!(
                "relation {} has only {} possible facts, {} requested",
                rel.name,
                pairs.len(),
                sizes.facts_per_relation
            );
        }
        facts.extend(
            pairs
                .into_iter()
                .take(sizes.facts_per_relation)
                .map(|(subject, object)| Fact { subject, relation: r, object }),
        );
    }
    Ok(World {
        entities,
        facts,
        relation_types: sizes.relation_types,
    })
}

/// Fact indices `f_1..f_N` and entities `e_0..e_N` of one chain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FactChain {
    pub facts: Vec<usize>,
    pub entities: Vec<usize>,
}

impl FactChain {
    pub fn hops(&self) -> usize {
        self.facts.len()
    }
}

/// Every chain of `hops` facts with pairwise distinct entities, in a fixed
/// order. Chains sharing an entity tuple are kept once.
pub fn enumerate_chains(world: &World, hops: usize) -> Result<Vec<FactChain>, SyntheticError> {
    if hops == 0 || hops > MAX_HOPS {
        return Err(SyntheticError::UnsupportedHops(hops));
    }
    let by_subject = world.by_subject();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, f1) in world.facts.iter().enumerate() {
        if f1.subject == f1.object {
            continue;
        }
        let chain = FactChain {
            facts: vec![i],
            entities: vec![f1.object, f1.subject],
        };
        extend_chains(world, &by_subject, chain, hops, &mut out, &mut seen);
    }
    Ok(out)
}

fn extend_chains(
    world: &World,
    by_subject: &HashMap<usize, Vec<usize>>,
    chain: FactChain,
    hops: usize,
    out: &mut Vec<FactChain>,
    seen: &mut HashSet<Vec<usize>>,
) {
    if chain.hops() == hops {
        if seen.insert(chain.entities.clone()) {
            out.push(chain);
        }
        return;
    }
    let last = *chain.entities.last().expect("chains are nonempty");
    let prev_relation = world.facts[*chain.facts.last().expect("chains are nonempty")].relation;
    for &fi in by_subject.get(&last).map_or(&[][..], Vec::as_slice) {
        let f = &world.facts[fi];
        if chain.hops() == 1 && f.relation == prev_relation {
            continue;
        }
        if chain.entities.contains(&f.object) {
            continue;
        }
        let mut next = chain.clone();
        next.facts.push(fi);
        next.entities.push(f.object);
        extend_chains(world, by_subject, next, hops, out, seen);
    }
}

/// `Q^1..Q^N` for a chain: the 1-hop question about `e_1`, then one
/// descriptor substitution per further fact.
pub fn chain_questions(world: &World, chain: &FactChain) -> Vec<String> {
    let mut q = world.question(&world.facts[chain.facts[0]]);
    let mut out = vec![q.clone()];
    for k in 1..chain.hops() {
        let f = &world.facts[chain.facts[k]];
        let target = &world.entities[chain.entities[k]].name;
        let desc = world.descriptor(f);
        q = q
            .split(' ')
            .map(|t| if t == target { desc.as_str() } else { t })
            .collect::<Vec<_>>()
            .join(" ");
        out.push(q.clone());
    }
    out
}

/// Reduces an N-hop question with the given facts: descriptors are replaced
/// by the entity they describe until a 1-hop question remains, whose answer
/// is returned. `None` if the question does not reduce.
pub fn reduce_question(world: &World, question: &str, facts: &[Fact]) -> Option<String> {
    let mut q: Vec<String> = question.split(' ').map(str::to_string).collect();
    loop {
        let mut changed = false;
        for f in facts {
            let desc: Vec<String> = world.descriptor(f).split(' ').map(str::to_string).collect();
            if let Some(p) = q.windows(desc.len()).position(|w| w == desc.as_slice()) {
                q.splice(p..p + desc.len(), [world.entities[f.subject].name.clone()]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let q = q.join(" ");
    facts
        .iter()
        .find(|f| world.question(f) == q)
        .map(|f| world.entities[f.object].name.clone())
}

/// Renders one record for a chain. Each fact gets its own document with one
/// or two distractor sentences about entities off the chain and unused by
/// the other documents; documents are shuffled.
pub fn render_example(world: &World, chain: &FactChain, id: String, rng: &mut impl Rng) -> DatasetRecord {
    let mut used: BTreeSet<usize> = chain.entities.iter().copied().collect();
    let mut documents: Vec<DocumentRecord> = Vec::with_capacity(chain.hops());
    for (k, &fi) in chain.facts.iter().enumerate() {
        let f = &world.facts[fi];
        let mut sentences = vec![world.fact_sentence(f)];
        let mut entities = vec![world.entities[f.subject].name.clone(), world.entities[f.object].name.clone()];
        let want = rng.gen_range(1..=2);
        let mut added = 0;
        for _ in 0..100 {
            if added == want || world.facts.is_empty() {
                break;
            }
            let d = &world.facts[rng.gen_range(0..world.facts.len())];
            if used.contains(&d.subject) || used.contains(&d.object) || d.subject == d.object {
                continue;
            }
            used.insert(d.subject);
            used.insert(d.object);
            sentences.push(world.fact_sentence(d));
            entities.push(world.entities[d.subject].name.clone());
            entities.push(world.entities[d.object].name.clone());
            added += 1;
        }
        // the fact sentence lands at a random position among the distractors
        let pos = rng.gen_range(0..sentences.len());
        sentences.swap(0, pos);
        documents.push(DocumentRecord {
            title: world.entities[f.subject].name.clone(),
            text: sentences.join(" "),
            is_answer_doc: k == 0,
            entities,
        });
    }
    documents.shuffle(rng);
    let mut questions = chain_questions(world, chain);
    let question = questions.pop().expect("chains are nonempty");
    DatasetRecord {
        id,
        hops: chain.hops(),
        answer: world.entities[chain.entities[0]].name.clone(),
        question,
        documents,
        reference_intermediates: Some(questions),
        arrangement: None,
    }
}

/// A random `hops`-hop example.
pub fn generate_example(world: &World, hops: usize, seed: u64) -> Result<(DatasetRecord, FactChain), SyntheticError> {
    let chains = enumerate_chains(world, hops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = chains
        .choose(&mut rng)
        .ok_or(SyntheticError::NoChain { hops })?
        .clone();
    let rec = render_example(world, &chain, format!("ex-h{hops}-{seed}"), &mut rng);
    Ok((rec, chain))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub hops: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<DatasetRecord>,
    pub validation: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Train/validation/test records. Every record uses a different chain, so no
/// entity tuple of a test chain occurs in training.
pub fn make_splits(world: &World, counts: &[SplitCounts], seed: u64) -> Result<Splits, SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Splits::default();
    for c in counts {
        let mut chains = enumerate_chains(world, c.hops)?;
        let required = c.train + c.validation + c.test;
        if chains.len() < required {
            return Err(SyntheticError::InsufficientWorld {
                hops: c.hops,
                required,
                available: chains.len(),
            });
        }
        chains.shuffle(&mut rng);
        let mut it = chains.into_iter();
        for (name, n, dst) in [
            ("train", c.train, &mut out.train),
            ("validation", c.validation, &mut out.validation),
            ("test", c.test, &mut out.test),
        ] {
            for i in 0..n {
                let chain = it.next().expect("counted above");
                dst.push(render_example(world, &chain, format!("{name}-h{}-{i:05}", c.hops), &mut rng));
            }
        }
    }
    Ok(out)
}

/// Specials, then every template word in sorted order, then entity names.
pub fn vocabulary(world: &World) -> Result<Vocabulary, VocabError> {
    let words: BTreeSet<&str> = RELATIONS
        .iter()
        .flat_map(|r| [r.fact, r.question, r.descriptor])
        .flat_map(|t| t.split(' '))
        .filter(|w| !w.is_empty() && *w != "{s}" && *w != "{o}")
        .collect();
    Vocabulary::build(words.into_iter().chain(world.entities.iter().map(|e| e.name.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        generate_world(3, WorldSizes { entities: 60, relation_types: 6, facts_per_relation: 40 }).unwrap()
    }

    #[test]
    fn same_seed_same_world_and_integrity() {
        let w = world();
        assert_eq!(w, world());
        let small = generate_world(1, WorldSizes { entities: 50, relation_types: 4, facts_per_relation: 30 }).unwrap();
        for f in &small.facts {
            let r = &RELATIONS[f.relation];
            assert!(f.relation < 4);
            assert_eq!(small.entities[f.subject].kind, r.subject);
            assert_eq!(small.entities[f.object].kind, r.object);
        }
    }

    #[test]
    fn empty_world_errors_cleanly() {
        let w = generate_world(0, WorldSizes { entities: 0, relation_types: 0, facts_per_relation: 0 }).unwrap();
        assert!(w.facts.is_empty());
        assert_eq!(generate_example(&w, 1, 0).unwrap_err(), SyntheticError::NoChain { hops: 1 });
        assert_eq!(enumerate_chains(&w, 5).unwrap_err(), SyntheticError::UnsupportedHops(5));
    }

    #[test]
    fn one_and_two_hop_questions() {
        let w = World {
            entities: vec![
                Entity { name: "person_7".into(), kind: Person },
                Entity { name: "film_3".into(), kind: Film },
                Entity { name: "person_9".into(), kind: Person },
            ],
            facts: vec![
                Fact { subject: 1, relation: 0, object: 0 },
                Fact { subject: 1, relation: 1, object: 2 },
            ],
            relation_types: 2,
        };
        let one = FactChain { facts: vec![0], entities: vec![0, 1] };
        assert_eq!(chain_questions(&w, &one), vec!["who directed film_3 ?"]);
        let two = FactChain { facts: vec![0, 1], entities: vec![0, 1, 2] };
        let qs = chain_questions(&w, &two);
        assert_eq!(qs[1], "who directed the film starring person_9 ?");
        assert_eq!(reduce_question(&w, &qs[1], &w.facts).as_deref(), Some("person_7"));
        let chains = enumerate_chains(&w, 2).unwrap();
        assert_eq!(chains.len(), 2);
        assert!(chains.contains(&two));
    }

    #[test]
    fn consecutive_documents_share_exactly_the_bridge() {
        let w = world();
        for hops in 1..=3 {
            let (rec, chain) = generate_example(&w, hops, 11).unwrap();
            assert_eq!(rec.documents.len(), hops);
            let facts: Vec<Fact> = chain.facts.iter().map(|&i| w.facts[i]).collect();
            assert_eq!(reduce_question(&w, &rec.question, &facts), Some(rec.answer.clone()));
            let by_title_fact = |k: usize| {
                let s = w.fact_sentence(&facts[k]);
                rec.documents.iter().find(|d| d.text.contains(&s)).unwrap()
            };
            for k in 1..hops {
                let a: BTreeSet<_> = by_title_fact(k - 1).entities.iter().collect();
                let b: BTreeSet<_> = by_title_fact(k).entities.iter().collect();
                let shared: Vec<_> = a.intersection(&b).collect();
                assert_eq!(shared, vec![&&w.entities[chain.entities[k]].name]);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_closed_over_the_vocabulary() {
        let w = world();
        let counts = [SplitCounts { hops: 2, train: 30, validation: 5, test: 5 }];
        let s = make_splits(&w, &counts, 9).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (30, 5, 5));
        assert_eq!(s, make_splits(&w, &counts, 9).unwrap());
        let sig = |r: &DatasetRecord| (r.answer.clone(), r.question.clone());
        let train: HashSet<_> = s.train.iter().map(sig).collect();
        assert!(s.test.iter().all(|r| !train.contains(&sig(r))));
        let v = vocabulary(&w).unwrap();
        for r in s.train.iter().chain(&s.test) {
            for d in &r.documents {
                assert!(d.text.split(' ').chain(d.title.split(' ')).all(|t| v.contains(t)));
            }
            assert!(r.question.split(' ').all(|t| v.contains(t)));
        }
        let too_many = [SplitCounts { hops: 2, train: 100_000, validation: 0, test: 0 }];
        assert!(matches!(
            make_splits(&w, &too_many, 9),
            Err(SyntheticError::InsufficientWorld { required: 100_000, .. })
        ));
    }
}
