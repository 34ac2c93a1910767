//! Seeded prompt-set generation.

use super::{PosevalError, PromptObject, PromptRecord, RelVariant, Task, Vocab};
use crate::layout::SceneRelation;
use crate::rng::PortableRng;
use crate::spatial::Relation;

pub const SAME_PHRASE: &str = "on the same side of";
pub const OPPOSITE_PHRASES: [&str; 3] = ["on the other side of", "on the opposite side of", "on the contrary side of"];

/// Indefinite article by leading vowel letter.
pub fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn with_article(phrase: &str) -> String {
    format!("{} {phrase}", article(phrase))
}

fn rel(subject: usize, relation: Relation, object: usize) -> SceneRelation {
    SceneRelation { subject, relation, object }
}

fn object(class: &str, attribute: Option<&str>) -> PromptObject {
    PromptObject { class: class.to_string(), attribute: attribute.map(String::from) }
}

/// Cells of the 2x2 grid in cyclic order: top-left, top-right,
/// bottom-right, bottom-left, as (row, col).
const CYCLE: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];

/// Relation of the object in cell `a` to the object in adjacent cell `b`.
fn adjacent_relation(a: (usize, usize), b: (usize, usize)) -> Relation {
    if a.0 == b.0 {
        if a.1 < b.1 {
            Relation::LeftOf
        } else {
            Relation::RightOf
        }
    } else if a.0 < b.0 {
        Relation::Above
    } else {
        Relation::Below
    }
}

fn listing(names: &[&str]) -> String {
    let items: Vec<String> = names.iter().map(|n| with_article(n)).collect();
    let (last, rest) = items.split_last().expect("at least two objects");
    format!("A photo of {}, and {last}.", rest.join(", "))
}

fn two_obj(rng: &mut PortableRng, vocab: &Vocab, seed: u64, index: usize) -> PromptRecord {
    let ids = rng.choose_distinct(vocab.objects.len(), 2);
    let r = vocab.relations[rng.below(vocab.relations.len())];
    let (a, b) = (&vocab.objects[ids[0]], &vocab.objects[ids[1]]);
    PromptRecord {
        task: Task::TwoObj,
        prompt_text: format!("a photo of {} {r} {}", with_article(a), with_article(b)),
        objects: vec![object(a, None), object(b, None)],
        stated_relations: vec![rel(0, r, 1)],
        rel_variant: None,
        seed,
        index,
    }
}

/// Rewrites a two-object record as its negated counterpart: the relation is
/// replaced by the negation of its inverse, so the same scene satisfies both.
pub fn neg_from_two_obj(source: &PromptRecord) -> PromptRecord {
    let r = source.stated_relations[0];
    let negated = r.relation.inverse();
    let a = with_article(&source.objects[r.subject].class);
    let b = with_article(&source.objects[r.object].class);
    PromptRecord {
        task: Task::Neg,
        prompt_text: format!("a photo of {a} and {b}, {a} is not {negated} {b}"),
        stated_relations: vec![rel(r.subject, negated, r.object)],
        ..source.clone()
    }
}

fn pab(rng: &mut PortableRng, vocab: &Vocab, seed: u64, index: usize) -> PromptRecord {
    let ids = rng.choose_distinct(vocab.objects.len(), 2);
    let colors = rng.choose_distinct(vocab.colors.len(), 2);
    let r = vocab.relations[rng.below(vocab.relations.len())];
    let (a, b) = (&vocab.objects[ids[0]], &vocab.objects[ids[1]]);
    let (ca, cb) = (&vocab.colors[colors[0]], &vocab.colors[colors[1]]);
    PromptRecord {
        task: Task::Pab,
        prompt_text: format!("a photo of {} {a} {r} {} {b}", with_article(ca), with_article(cb)),
        objects: vec![object(a, Some(ca)), object(b, Some(cb))],
        stated_relations: vec![rel(0, r, 1)],
        rel_variant: None,
        seed,
        index,
    }
}

/// Three or four objects chained around the 2x2 grid. Each adjacent pair is
/// stated from either end with equal probability; the object listing and the
/// relation sentences are shuffled independently.
fn chain(rng: &mut PortableRng, vocab: &Vocab, task: Task, seed: u64, index: usize) -> PromptRecord {
    let n = task.object_count();
    let ids = rng.choose_distinct(vocab.objects.len(), n);
    let names: Vec<&str> = ids.iter().map(|&i| vocab.objects[i].as_str()).collect();
    let start = rng.below(4);
    let step = if rng.coin() { 1 } else { 3 };
    let cells: Vec<(usize, usize)> = (0..n).map(|i| CYCLE[(start + step * i) % 4]).collect();
    let pairs: Vec<(usize, usize)> = match task {
        Task::FourObj => vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        _ => vec![(0, 1), (1, 2)],
    };
    let mut stated = Vec::with_capacity(pairs.len());
    let mut sentences = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let r = adjacent_relation(cells[i], cells[j]);
        let (s, relation, o) = if rng.coin() { (i, r, j) } else { (j, r.inverse(), i) };
        sentences.push(format!("The {} is {relation} the {}.", names[s], names[o]));
        stated.push(rel(s, relation, o));
    }
    let mut listed = names.clone();
    rng.shuffle(&mut listed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    rng.shuffle(&mut order);
    let mut text = listing(&listed);
    for k in &order {
        text.push(' ');
        text.push_str(&sentences[*k]);
    }
    PromptRecord {
        task,
        prompt_text: text,
        objects: names.iter().map(|n| object(n, None)).collect(),
        stated_relations: order.iter().map(|&k| stated[k]).collect(),
        rel_variant: None,
        seed,
        index,
    }
}

fn relative(rng: &mut PortableRng, vocab: &Vocab, variant: RelVariant, seed: u64, index: usize) -> PromptRecord {
    let ids = rng.choose_distinct(vocab.objects.len(), 3);
    let names: Vec<&str> = ids.iter().map(|&i| vocab.objects[i].as_str()).collect();
    let r = vocab.relations[rng.below(vocab.relations.len())];
    let (phrase, prep, target) = match variant {
        RelVariant::Same => (SAME_PHRASE, "as", r),
        RelVariant::Opposite => (OPPOSITE_PHRASES[rng.below(OPPOSITE_PHRASES.len())], "for", r.inverse()),
    };
    PromptRecord {
        task: Task::Rel,
        prompt_text: format!(
            "a photo of {} {r} {}, and {} {phrase} the {} {prep} the {}",
            with_article(names[0]),
            with_article(names[1]),
            with_article(names[2]),
            names[1],
            names[0]
        ),
        objects: names.iter().map(|n| object(n, None)).collect(),
        stated_relations: vec![rel(0, r, 1), rel(2, target, 1)],
        rel_variant: Some(variant),
        seed,
        index,
    }
}

/// `n` records for `task`, a pure function of `(task, n, seed, vocab)`.
/// Negative records are derived one-to-one from the two-object set with the
/// same seed. Relative sets hold `n / 2` same-side records (rounded down),
/// the rest opposite, in shuffled order.
pub fn gen_prompts(task: Task, n: usize, seed: u64, vocab: &Vocab) -> Result<Vec<PromptRecord>, PosevalError> {
    vocab.require(task)?;
    if task == Task::Neg {
        return Ok(gen_prompts(Task::TwoObj, n, seed, vocab)?.iter().map(neg_from_two_obj).collect());
    }
    let mut rng = PortableRng::substream(seed, &format!("poseval/{task}"));
    let mut variants: Vec<RelVariant> =
        (0..n).map(|i| if i < n / 2 { RelVariant::Same } else { RelVariant::Opposite }).collect();
    if task == Task::Rel {
        rng.shuffle(&mut variants);
    }
    Ok((0..n)
        .map(|i| match task {
            Task::TwoObj => two_obj(&mut rng, vocab, seed, i),
            Task::Pab => pab(&mut rng, vocab, seed, i),
            Task::ThreeObj | Task::FourObj => chain(&mut rng, vocab, task, seed, i),
            Task::Rel => relative(&mut rng, vocab, variants[i], seed, i),
            Task::Neg => unreachable!("derived above"),
        })
        .collect())
}
