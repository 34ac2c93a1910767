//! Heuristic reader for simple positional descriptions ("a dog left of a
//! cat", "The cat is above the bird."). Backs the offline fallback provider.

use super::{SceneObject, SceneRelation, SceneSpec};
use crate::spatial::Relation;

const PATTERNS: &[(&[&str], Relation)] = &[
    (&["to", "the", "left", "of"], Relation::LeftOf),
    (&["on", "the", "left", "of"], Relation::LeftOf),
    (&["left", "of"], Relation::LeftOf),
    (&["to", "the", "right", "of"], Relation::RightOf),
    (&["on", "the", "right", "of"], Relation::RightOf),
    (&["right", "of"], Relation::RightOf),
    (&["on", "top", "of"], Relation::Above),
    (&["above"], Relation::Above),
    (&["over"], Relation::Above),
    (&["below"], Relation::Below),
    (&["beneath"], Relation::Below),
    (&["underneath"], Relation::Below),
    (&["under"], Relation::Below),
];

const ARTICLES: &[&str] = &["a", "an", "the"];
const TRAILING: &[&str] =
    &["is", "are", "not", "placed", "located", "positioned", "sits", "sitting", "standing", "appears"];
const STOPS: &[&str] = &["is", "are", "as", "for", "that", "which", "with", "while"];

fn find_relation(words: &[&str]) -> Option<(usize, usize, Relation)> {
    (0..words.len()).find_map(|start| {
        PATTERNS.iter().find_map(|(pattern, rel)| {
            let end = start + pattern.len();
            (end <= words.len() && words[start..end] == **pattern).then_some((start, end, *rel))
        })
    })
}

fn phrase_before(words: &[&str]) -> String {
    let mut end = words.len();
    while end > 0 && TRAILING.contains(&words[end - 1]) {
        end -= 1;
    }
    let head = &words[..end];
    let start = head.iter().rposition(|w| ARTICLES.contains(w)).map_or(0, |p| p + 1);
    head[start..].join(" ")
}

fn phrase_after(words: &[&str]) -> String {
    let mut start = 0;
    while start < words.len() && ARTICLES.contains(&words[start]) {
        start += 1;
    }
    let rest = &words[start..];
    let end = rest.iter().position(|w| STOPS.contains(w)).unwrap_or(rest.len());
    rest[..end].join(" ")
}

fn register(scene: &mut SceneSpec, name: String) -> Option<usize> {
    if name.is_empty() || name == "photo" {
        return None;
    }
    if let Some(i) = scene.objects.iter().position(|o| o.name == name) {
        return Some(i);
    }
    scene.objects.push(SceneObject { name, attribute: None });
    Some(scene.objects.len() - 1)
}

/// Objects in order of first mention plus every relation found. Negated
/// relations ("is not left of") become their inverse, which is one way of
/// satisfying them.
pub fn parse_scene(description: &str) -> SceneSpec {
    let lower = description.to_lowercase();
    let mut scene = SceneSpec::default();
    for clause in lower.split(['.', ',', ';', '!', '?', '\n']) {
        for part in clause.split(" and ") {
            let words: Vec<&str> = part.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            match find_relation(&words) {
                Some((start, end, relation)) => {
                    let negated = start > 0 && words[start - 1] == "not";
                    let subject = register(&mut scene, phrase_before(&words[..start]));
                    let object = register(&mut scene, phrase_after(&words[end..]));
                    if let (Some(subject), Some(object)) = (subject, object) {
                        if subject != object {
                            let relation = if negated { relation.inverse() } else { relation };
                            scene.relations.push(SceneRelation { subject, relation, object });
                        }
                    }
                }
                None => {
                    register(&mut scene, phrase_before(&words));
                }
            }
        }
    }
    if scene.objects.is_empty() {
        let whole = description.trim();
        if !whole.is_empty() {
            scene.objects.push(SceneObject { name: whole.to_string(), attribute: None });
        }
    }
    scene
}
