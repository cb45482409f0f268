//! Per-task frequency statistics used to seed replay prompts. The database
//! stores atom counts only — object names, attribute words, relation
//! phrases — never a training sample or a complete scene graph, so its
//! footprint depends on the atom inventory, not the corpus size.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldgen::{
    Relationship, SceneGraph, TaskDataset, KNOWLEDGE_PREDICATE, TEXT_PREDICATE,
};

/// How prompts are assembled from the stored statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Sample atoms independently and recompose them into phrases.
    #[default]
    AtomRecompose,
    /// Sample whole relationship phrases observed during training.
    WholePhrase,
}

/// Frequency tables for one task.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptEntry {
    pub objects: BTreeMap<String, u64>,
    pub attributes: BTreeMap<String, u64>,
    pub relations: BTreeMap<String, u64>,
    /// Whole-phrase counts, kept only in [`PromptMode::WholePhrase`];
    /// sorted by relationship for deterministic draws.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phrases: Vec<(Relationship, u64)>,
    pub mode: PromptMode,
    /// Canonical serialized size, measured at build time.
    pub bytes: usize,
}

impl PromptEntry {
    /// Canonical binary encoding used for storage accounting: for every
    /// table, an entry count followed by (key length, key bytes, count)
    /// records with fixed-width integers. Count magnitudes therefore do not
    /// change the size — only the atom inventory does.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for table in [&self.objects, &self.attributes, &self.relations] {
            out.extend_from_slice(&(table.len() as u64).to_le_bytes());
            for (key, count) in table {
                out.extend_from_slice(&(key.len() as u64).to_le_bytes());
                out.extend_from_slice(key.as_bytes());
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.phrases.len() as u64).to_le_bytes());
        for (rel, count) in &self.phrases {
            let key = rel.render();
            out.extend_from_slice(&(key.len() as u64).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out
    }

    fn record(&mut self, rel: &Relationship, phrases: &mut BTreeMap<Relationship, u64>) {
        if rel.is_attribute() {
            bump(&mut self.attributes, &rel.predicate);
            bump(&mut self.objects, &rel.subject);
        } else if rel.predicate == KNOWLEDGE_PREDICATE || rel.predicate == TEXT_PREDICATE {
            // Knowledge and signage rows contribute their subject, but the
            // predicate and its value/text object are not scene atoms a
            // prompt could be completed from.
            bump(&mut self.objects, &rel.subject);
        } else {
            bump(&mut self.relations, &rel.predicate);
            bump(&mut self.objects, &rel.subject);
            bump(&mut self.objects, &rel.object);
        }
        if self.mode == PromptMode::WholePhrase {
            *phrases.entry(rel.clone()).or_insert(0) += 1;
        }
    }
}

fn bump(table: &mut BTreeMap<String, u64>, key: &str) {
    *table.entry(key.to_string()).or_insert(0) += 1;
}

/// Counts atoms over a task's train split. The entry records its own
/// canonical byte size.
pub fn build_prompt_db(task: &TaskDataset, mode: PromptMode) -> Result<PromptEntry> {
    if task.train.is_empty() {
        return Err(Error::data(format!(
            "task '{}' has an empty train split",
            task.task_tag
        )));
    }
    let mut entry = PromptEntry { mode, ..PromptEntry::default() };
    let mut phrases = BTreeMap::new();
    for sample in &task.train {
        for rel in &sample.scene_graph.relationships {
            entry.record(rel, &mut phrases);
        }
    }
    entry.phrases = phrases.into_iter().collect();
    entry.bytes = entry.canonical_bytes().len();
    Ok(entry)
}

/// All tasks' prompt statistics, keyed by task tag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SgPromptDB {
    pub tasks: BTreeMap<String, PromptEntry>,
}

impl SgPromptDB {
    pub fn insert(&mut self, task_tag: &str, entry: PromptEntry) {
        self.tasks.insert(task_tag.to_string(), entry);
    }

    pub fn entry(&self, task_tag: &str) -> Option<&PromptEntry> {
        self.tasks.get(task_tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    /// Total canonical byte size across tasks.
    pub fn byte_size(&self) -> usize {
        self.tasks.values().map(|e| e.bytes).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("db serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SgPromptDB> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
    }
}

/// Draws a prompt fragment of 1–3 relationship phrases whose atoms follow
/// the stored frequencies for `task_tag`.
pub fn sample_sg_prompt(
    db: &SgPromptDB,
    task_tag: &str,
    rng: &mut impl Rng,
) -> Result<SceneGraph> {
    let entry = db
        .entry(task_tag)
        .ok_or_else(|| Error::config(format!("no prompt statistics for task '{task_tag}'")))?;
    let n_items = rng.random_range(1..=3usize);
    let mut rels: Vec<Relationship> = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        // Allow a few redraws so a fragment rarely repeats itself verbatim.
        let mut rel = sample_item(entry, rng)?;
        for _ in 0..4 {
            if !rels.contains(&rel) {
                break;
            }
            rel = sample_item(entry, rng)?;
        }
        rels.push(rel);
    }
    Ok(SceneGraph::new(rels))
}

fn sample_item(entry: &PromptEntry, rng: &mut impl Rng) -> Result<Relationship> {
    if entry.mode == PromptMode::WholePhrase {
        let total: u64 = entry.phrases.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(Error::data("whole-phrase table is empty"));
        }
        let mut x = rng.random_range(0..total);
        for (rel, count) in &entry.phrases {
            if x < *count {
                return Ok(rel.clone());
            }
            x -= count;
        }
        unreachable!("weighted draw walked past the total mass");
    }
    let attr_mass: u64 = entry.attributes.values().sum();
    let rel_mass: u64 = entry.relations.values().sum();
    if attr_mass + rel_mass == 0 {
        return Err(Error::data("prompt entry has no attribute or relation atoms"));
    }
    let pick_attr = if attr_mass == 0 {
        false
    } else if rel_mass == 0 {
        true
    } else {
        rng.random_range(0..attr_mass + rel_mass) < attr_mass
    };
    if pick_attr {
        let attr = weighted_key(&entry.attributes, rng).expect("attr mass checked");
        let subject = weighted_key(&entry.objects, rng)
            .ok_or_else(|| Error::data("prompt entry has no object atoms"))?;
        Ok(Relationship::attribute(&subject, &attr))
    } else {
        let predicate = weighted_key(&entry.relations, rng).expect("rel mass checked");
        let subject = weighted_key(&entry.objects, rng)
            .ok_or_else(|| Error::data("prompt entry has no object atoms"))?;
        let mut object = weighted_key(&entry.objects, rng).unwrap();
        for _ in 0..8 {
            if object != subject {
                break;
            }
            object = weighted_key(&entry.objects, rng).unwrap();
        }
        Ok(Relationship::relation(&subject, &predicate, &object))
    }
}

/// Weighted draw over a frequency table, proportional to the counts.
fn weighted_key(table: &BTreeMap<String, u64>, rng: &mut impl Rng) -> Option<String> {
    let total: u64 = table.values().sum();
    if total == 0 {
        return None;
    }
    let mut x = rng.random_range(0..total);
    for (key, count) in table {
        if x < *count {
            return Some(key.clone());
        }
        x -= count;
    }
    unreachable!("weighted draw walked past the total mass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::worldgen::Sample;

    fn task_from_graphs(tag: &str, graphs: Vec<SceneGraph>) -> TaskDataset {
        let train = graphs
            .into_iter()
            .enumerate()
            .map(|(i, g)| Sample {
                id: format!("{tag}-{i:05}"),
                scene: 'a',
                scene_graph: g.clone(),
                evidence_graph: g,
                question: "what is the furniture".into(),
                annotations: vec!["chair".into(); 10],
                program: crate::worldgen::FunctionalProgram::new(&[
                    ("Select", "furniture"),
                    ("Query", "name"),
                ]),
                task_tag: tag.into(),
                ocr_tokens: None,
                knowledge: None,
            })
            .collect();
        TaskDataset {
            task_tag: tag.into(),
            train,
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    fn rel(s: &str, p: &str, o: &str) -> Relationship {
        Relationship::relation(s, p, o)
    }

    #[test]
    fn counts_are_exact_over_the_train_split() {
        let graphs = vec![
            SceneGraph::new(vec![
                rel("cat", "on", "table"),
                Relationship::attribute("cat", "black"),
            ]),
            SceneGraph::new(vec![rel("cat", "under", "chair")]),
        ];
        let entry = build_prompt_db(&task_from_graphs("a", graphs), PromptMode::AtomRecompose)
            .unwrap();
        assert_eq!(entry.objects["cat"], 3);
        assert_eq!(entry.objects["table"], 1);
        assert_eq!(entry.attributes["black"], 1);
        assert_eq!(entry.relations["on"], 1);
        assert_eq!(entry.relations["under"], 1);
        assert!(entry.phrases.is_empty());
        assert_eq!(entry.bytes, entry.canonical_bytes().len());
    }

    #[test]
    fn knowledge_and_signage_rows_contribute_only_their_subject() {
        let graphs = vec![SceneGraph::new(vec![
            Relationship::relation("sofa", KNOWLEDGE_PREDICATE, "sitting"),
            Relationship::relation("sign", TEXT_PREDICATE, "exit"),
        ])];
        let entry = build_prompt_db(&task_from_graphs("k", graphs), PromptMode::AtomRecompose)
            .unwrap();
        assert_eq!(entry.objects["sofa"], 1);
        assert_eq!(entry.objects["sign"], 1);
        assert!(!entry.objects.contains_key("sitting"));
        assert!(!entry.objects.contains_key("exit"));
        assert!(entry.relations.is_empty());
    }

    #[test]
    fn byte_size_tracks_atom_inventory_not_corpus_size() {
        let small: Vec<SceneGraph> = (0..20)
            .map(|_| SceneGraph::new(vec![rel("cat", "on", "table")]))
            .collect();
        let large: Vec<SceneGraph> = (0..2000)
            .map(|_| SceneGraph::new(vec![rel("cat", "on", "table")]))
            .collect();
        let e_small =
            build_prompt_db(&task_from_graphs("a", small), PromptMode::AtomRecompose).unwrap();
        let e_large =
            build_prompt_db(&task_from_graphs("a", large), PromptMode::AtomRecompose).unwrap();
        assert_eq!(e_small.bytes, e_large.bytes);
        assert_eq!(e_large.objects["cat"], 2000);
    }

    #[test]
    fn degenerate_single_atom_tables_always_sample_that_atom() {
        let graphs = vec![SceneGraph::new(vec![rel("cat", "on", "cat")])];
        let mut db = SgPromptDB::default();
        db.insert(
            "a",
            build_prompt_db(&task_from_graphs("a", graphs), PromptMode::AtomRecompose).unwrap(),
        );
        let mut r = rng::stream(1, "db-test", 0);
        for _ in 0..50 {
            let prompt = sample_sg_prompt(&db, "a", &mut r).unwrap();
            let n = prompt.relationships.len();
            assert!((1..=3).contains(&n));
            for rel in &prompt.relationships {
                assert_eq!(rel.subject, "cat");
                assert_eq!(rel.predicate, "on");
                assert_eq!(rel.object, "cat");
            }
        }
        assert!(sample_sg_prompt(&db, "zzz", &mut r).is_err());
    }

    #[test]
    fn whole_phrase_mode_replays_observed_phrases() {
        let graphs = vec![SceneGraph::new(vec![
            rel("cat", "on", "table"),
            Relationship::attribute("chair", "red"),
        ])];
        let mut db = SgPromptDB::default();
        db.insert(
            "a",
            build_prompt_db(&task_from_graphs("a", graphs), PromptMode::WholePhrase).unwrap(),
        );
        let entry = db.entry("a").unwrap();
        let rendered: Vec<String> = entry.phrases.iter().map(|(r, _)| r.render()).collect();
        assert!(rendered.contains(&"cat on table".to_string()));
        assert!(rendered.contains(&"red chair".to_string()));
        let mut r = rng::stream(2, "db-test", 1);
        for _ in 0..20 {
            let prompt = sample_sg_prompt(&db, "a", &mut r).unwrap();
            for rel in &prompt.relationships {
                assert!(rendered.contains(&rel.render()), "{}", rel.render());
            }
        }
    }

    #[test]
    fn db_round_trips_through_json() {
        let graphs = vec![SceneGraph::new(vec![rel("cat", "on", "table")])];
        let mut db = SgPromptDB::default();
        db.insert(
            "o",
            build_prompt_db(&task_from_graphs("o", graphs), PromptMode::AtomRecompose).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.json");
        db.save(&path).unwrap();
        let back = SgPromptDB::load(&path).unwrap();
        assert_eq!(back.byte_size(), db.byte_size());
        assert_eq!(back.entry("o").unwrap().objects["cat"], 1);
    }
}
