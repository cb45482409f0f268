//! Sample generation: builds one QA sample per call by constructing the
//! question's evidence rows first, then padding the graph with distractor
//! rows that are filtered so they can never make the question ambiguous
//! (no second object of the queried category, no second subject for the
//! queried (relation, object) pair, and so on). A brute-force program
//! interpreter in the test suite replays every emitted sample against its
//! graph to hold this contract.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::bank::{
    ConceptBank, ObjectDef, ATTR_CATEGORIES, FUNCTIONS, KNOWLEDGE_PREDICATE, PERSON_RELATIONS,
    SCENES, SPATIAL_RELATIONS, TEXT_PREDICATE,
};
use super::{FunctionalProgram, OcrEntry, Relationship, Sample, SceneGraph, WorldSpec};
use crate::error::Result;
use crate::rng;

fn pick<'a, T>(r: &mut impl Rng, items: &'a [T]) -> &'a T {
    &items[r.random_range(0..items.len())]
}

/// Generates the full raw sample pool: `samples_per_cell` samples for every
/// (scene, function) cell, deterministically from the seed.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<(ConceptBank, Vec<Sample>)> {
    spec.validate()?;
    let bank = ConceptBank::default_world();
    bank.validate()?;
    let mut pool = Vec::new();
    for (si, (scene, _)) in SCENES.iter().enumerate() {
        for (fi, func) in FUNCTIONS.iter().enumerate() {
            let cell = (si * FUNCTIONS.len() + fi) as u64;
            let mut r = rng::stream(seed, "worldgen-cell", cell);
            for j in 0..spec.samples_per_cell {
                let sample = generate_sample(&bank, *scene, *func, j, spec, &mut r)?;
                debug_assert!(sample.validate().is_ok());
                pool.push(sample);
            }
        }
    }
    Ok((bank, pool))
}

struct PartialSample {
    question: String,
    answer: String,
    program: FunctionalProgram,
    ocr_tokens: Option<Vec<OcrEntry>>,
    knowledge: Option<String>,
}

fn generate_sample(
    bank: &ConceptBank,
    scene: char,
    func: char,
    index: usize,
    spec: &WorldSpec,
    r: &mut impl Rng,
) -> Result<Sample> {
    let mut b = GraphBuilder::new(bank, scene);
    let partial = match func {
        'o' => gen_object(bank, &mut b, r),
        'a' => gen_attribute(bank, &mut b, r),
        'r' => gen_relation(bank, &mut b, r),
        'l' => gen_logic(bank, &mut b, r),
        'k' => gen_knowledge(bank, &mut b, r),
        's' => gen_scene_text(bank, &mut b, r),
        other => unreachable!("unknown function letter {other}"),
    };
    b.fill_distractors(spec, r);
    let (scene_graph, evidence_graph) = b.finish(r);

    let mut annotations = vec![partial.answer.clone(); 10];
    let noisy = (spec.annotation_noise * 10.0).round() as usize;
    for slot in annotations.iter_mut().rev().take(noisy) {
        *slot = wrong_answer(bank, func, &partial.answer, scene, r);
    }

    let task_tag = super::assign_function_task(
        &partial.program,
        partial.ocr_tokens.is_some(),
        partial.knowledge.is_some(),
    )?;
    debug_assert_eq!(task_tag, func, "archetype builders must map to their own task");

    Ok(Sample {
        id: format!("{scene}{func}-{index:05}"),
        scene,
        scene_graph,
        evidence_graph,
        question: partial.question,
        annotations,
        program: partial.program,
        task_tag: task_tag.to_string(),
        ocr_tokens: partial.ocr_tokens,
        knowledge: partial.knowledge,
    })
}

/// A wrong-but-plausible answer for annotator-noise slots: drawn from the
/// same answer family as the true answer.
fn wrong_answer(
    bank: &ConceptBank,
    func: char,
    answer: &str,
    scene: char,
    r: &mut impl Rng,
) -> String {
    for _ in 0..64 {
        let candidate = match func {
            'o' | 'r' | 'k' => pick(r, &bank.scene_objects(scene)).name.clone(),
            'a' | 'l' => match answer {
                "yes" => "no".to_string(),
                "no" => "yes".to_string(),
                _ => {
                    if ATTR_CATEGORIES.contains(&answer) {
                        pick(r, &ATTR_CATEGORIES).to_string()
                    } else {
                        pick(r, &bank.attributes).word.clone()
                    }
                }
            },
            's' => pick(r, &bank.ocr_lexicon).clone(),
            _ => unreachable!(),
        };
        if candidate != answer {
            return candidate;
        }
    }
    // Degenerate single-candidate family; fall back to an attribute word.
    bank.attributes[0].word.clone()
}

// ---------------------------------------------------------------------------
// Archetype builders
// ---------------------------------------------------------------------------

fn gen_object(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let uniques: Vec<&ObjectDef> = bank
        .scene_objects(b.scene)
        .into_iter()
        .filter(|o| o.scenes.len() == 1)
        .collect();
    let target = *pick(r, &uniques);
    b.add_object(&target.name);
    // The queried category must have exactly one instance in the graph.
    b.forbidden_category = Some(target.category.clone());
    // Give the target at least one relation row so it is mentioned.
    let partner = b.add_new_object(r).unwrap_or_else(|| target.name.clone());
    let row = b.make_relation_row(&target.name, &partner, r);
    b.add_row(row.clone(), true);
    PartialSample {
        question: format!("what is the {}", target.category),
        answer: target.name.clone(),
        program: FunctionalProgram::new(&[
            ("Select", target.category.as_str()),
            ("Query", "name"),
        ]),
        ocr_tokens: None,
        knowledge: None,
    }
}

fn gen_attribute(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let objects = bank.scene_objects(b.scene);
    let target = pick(r, &objects).name.clone();
    b.add_object(&target);
    let category = *pick(r, &ATTR_CATEGORIES);
    let values = bank.attrs_in_category(category);
    let value = *pick(r, &values);
    b.set_attr(&target, category, value, true);

    match r.random_range(0..3u8) {
        0 => PartialSample {
            question: format!("what {category} is the {target}"),
            answer: value.to_string(),
            program: FunctionalProgram::new(&[("Select", target.as_str()), ("Query", category)]),
            ocr_tokens: None,
            knowledge: None,
        },
        1 => {
            let yes = r.random_bool(0.5);
            let probe = if yes {
                value.to_string()
            } else {
                let others: Vec<&&str> = values.iter().filter(|v| **v != value).collect();
                pick(r, &others).to_string()
            };
            PartialSample {
                question: format!("is the {target} {probe}"),
                answer: if yes { "yes" } else { "no" }.to_string(),
                program: FunctionalProgram::new(&[
                    ("Select", target.as_str()),
                    ("Verify", probe.as_str()),
                ]),
                ocr_tokens: None,
                knowledge: None,
            }
        }
        _ => {
            let others: Vec<&&str> = values.iter().filter(|v| **v != value).collect();
            let alt = pick(r, &others).to_string();
            let (first, second) = if r.random_bool(0.5) {
                (value.to_string(), alt)
            } else {
                (alt, value.to_string())
            };
            let arg = format!("{first}|{second}");
            PartialSample {
                question: format!("is the {target} {first} or {second}"),
                answer: value.to_string(),
                program: FunctionalProgram::new(&[
                    ("Select", target.as_str()),
                    ("Choose", arg.as_str()),
                ]),
                ocr_tokens: None,
                knowledge: None,
            }
        }
    }
}

fn gen_relation(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let uniques: Vec<&ObjectDef> = bank
        .scene_objects(b.scene)
        .into_iter()
        .filter(|o| o.scenes.len() == 1)
        .collect();
    let subject = pick(r, &uniques).name.clone();
    b.add_object(&subject);
    let object = b
        .add_new_object(r)
        .expect("every scene has more objects than one");
    let relation = pick(r, &SPATIAL_RELATIONS).to_string();
    b.add_row(Relationship::relation(&subject, &relation, &object), true);
    // No second subject may hold the same relation to the same object.
    b.forbidden_rel_obj = Some((relation.clone(), object.clone()));
    PartialSample {
        question: format!("what is {relation} the {object}"),
        answer: subject.clone(),
        program: FunctionalProgram::new(&[
            ("Select", object.as_str()),
            ("Relate", relation.as_str()),
            ("Query", "name"),
        ]),
        ocr_tokens: None,
        knowledge: None,
    }
}

fn gen_logic(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let x = pick(r, &bank.scene_objects(b.scene)).name.clone();
    b.add_object(&x);
    let y = b
        .add_new_object(r)
        .expect("every scene has more objects than one");
    match r.random_range(0..3u8) {
        0 | 1 => {
            // "same"/"different" probes over one attribute category.
            let category = *pick(r, &ATTR_CATEGORIES);
            let values = bank.attrs_in_category(category);
            let vx = *pick(r, &values);
            let equal = r.random_bool(0.5);
            let vy = if equal {
                vx
            } else {
                let others: Vec<&&str> = values.iter().filter(|v| **v != vx).collect();
                **pick(r, &others)
            };
            b.set_attr(&x, category, vx, true);
            b.set_attr(&y, category, vy, true);
            if r.random_bool(0.5) {
                PartialSample {
                    question: format!("are the {x} and the {y} the same {category}"),
                    answer: if equal { "yes" } else { "no" }.to_string(),
                    program: FunctionalProgram::new(&[
                        ("Select", x.as_str()),
                        ("Select", y.as_str()),
                        ("Same", category),
                    ]),
                    ocr_tokens: None,
                    knowledge: None,
                }
            } else {
                PartialSample {
                    question: format!("is the {x} a different {category} than the {y}"),
                    answer: if equal { "no" } else { "yes" }.to_string(),
                    program: FunctionalProgram::new(&[
                        ("Select", x.as_str()),
                        ("Select", y.as_str()),
                        ("Different", category),
                    ]),
                    ocr_tokens: None,
                    knowledge: None,
                }
            }
        }
        _ => {
            // "in common": exactly one shared category by construction.
            let ci = r.random_range(0..ATTR_CATEGORIES.len());
            let cj = (ci + 1 + r.random_range(0..ATTR_CATEGORIES.len() - 1)) % ATTR_CATEGORIES.len();
            let shared_cat = ATTR_CATEGORIES[ci];
            let other_cat = ATTR_CATEGORIES[cj];
            let shared = *pick(r, &bank.attrs_in_category(shared_cat));
            let other_values = bank.attrs_in_category(other_cat);
            let wx = *pick(r, &other_values);
            let alt: Vec<&&str> = other_values.iter().filter(|v| **v != wx).collect();
            let wy = **pick(r, &alt);
            b.set_attr(&x, shared_cat, shared, true);
            b.set_attr(&y, shared_cat, shared, true);
            b.set_attr(&x, other_cat, wx, true);
            b.set_attr(&y, other_cat, wy, true);
            // No further attributes may appear on either object.
            b.no_random_attrs.insert(x.clone());
            b.no_random_attrs.insert(y.clone());
            PartialSample {
                question: format!("what do the {x} and the {y} have in common"),
                answer: shared_cat.to_string(),
                program: FunctionalProgram::new(&[
                    ("Select", x.as_str()),
                    ("Select", y.as_str()),
                    ("Common", ""),
                ]),
                ocr_tokens: None,
                knowledge: None,
            }
        }
    }
}

fn gen_knowledge(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let unique_pool = bank.unique_pool(b.scene);
    let facts: Vec<_> = bank
        .facts_for_scene(b.scene)
        .into_iter()
        .filter(|f| unique_pool.contains(&f.subject))
        .collect();
    let fact = (*pick(r, &facts)).clone();
    b.add_object(&fact.subject);
    b.add_row(
        Relationship::relation(&fact.subject, KNOWLEDGE_PREDICATE, &fact.value),
        true,
    );
    PartialSample {
        question: format!("what is the thing that is used for {}", fact.value),
        answer: fact.subject.clone(),
        program: FunctionalProgram::new(&[
            ("knowledge-lookup", fact.value.as_str()),
            ("Query", "name"),
        ]),
        ocr_tokens: None,
        knowledge: Some(format!("{} {} {}", fact.subject, KNOWLEDGE_PREDICATE, fact.value)),
    }
}

fn gen_scene_text(bank: &ConceptBank, b: &mut GraphBuilder, r: &mut impl Rng) -> PartialSample {
    let holders: Vec<&ObjectDef> = bank
        .scene_objects(b.scene)
        .into_iter()
        .filter(|o| o.category == "signage")
        .collect();
    let holder = pick(r, &holders).name.clone();
    b.add_object(&holder);
    let word = pick(r, &bank.ocr_lexicon).clone();
    b.add_row(Relationship::relation(&holder, TEXT_PREDICATE, &word), true);

    let rand_box = |r: &mut dyn rand::RngCore| {
        [
            r.random_range(0.0..0.8),
            r.random_range(0.0..0.8),
            r.random_range(0.05..0.2),
            r.random_range(0.02..0.1),
        ]
    };
    let mut ocr = vec![OcrEntry { text: word.clone(), bbox: rand_box(r) }];
    // A little visual noise: extra text tokens that are present in the
    // "image" but not part of the graph or the answer.
    for _ in 0..r.random_range(0..=2u8) {
        let extra = pick(r, &bank.ocr_lexicon).clone();
        if extra != word {
            ocr.push(OcrEntry { text: extra, bbox: rand_box(r) });
        }
    }
    PartialSample {
        question: format!("what does the {holder} say"),
        answer: word,
        program: FunctionalProgram::new(&[
            ("Select", holder.as_str()),
            ("scene-text-read", ""),
        ]),
        ocr_tokens: Some(ocr),
        knowledge: None,
    }
}

// ---------------------------------------------------------------------------
// Graph assembly
// ---------------------------------------------------------------------------

struct GraphBuilder<'b> {
    bank: &'b ConceptBank,
    scene: char,
    rows: Vec<Relationship>,
    evidence: Vec<Relationship>,
    objects: Vec<String>,
    /// (object, category) -> value; one value per category per object.
    attrs: BTreeMap<String, BTreeMap<String, String>>,
    /// Objects excluded from random attribute decoration.
    no_random_attrs: BTreeSet<String>,
    /// No distractor object of this category may be added (object questions).
    forbidden_category: Option<String>,
    /// No distractor row may repeat this (relation, object) pair.
    forbidden_rel_obj: Option<(String, String)>,
}

impl<'b> GraphBuilder<'b> {
    fn new(bank: &'b ConceptBank, scene: char) -> Self {
        GraphBuilder {
            bank,
            scene,
            rows: Vec::new(),
            evidence: Vec::new(),
            objects: Vec::new(),
            attrs: BTreeMap::new(),
            no_random_attrs: BTreeSet::new(),
            forbidden_category: None,
            forbidden_rel_obj: None,
        }
    }

    fn add_object(&mut self, name: &str) {
        if !self.objects.iter().any(|o| o == name) {
            self.objects.push(name.to_string());
        }
    }

    /// Adds a fresh scene object distinct from everything already mentioned
    /// and outside the forbidden category.
    fn add_new_object(&mut self, r: &mut impl Rng) -> Option<String> {
        let candidates: Vec<&ObjectDef> = self
            .bank
            .scene_objects(self.scene)
            .into_iter()
            .filter(|o| !self.objects.iter().any(|e| *e == o.name))
            .filter(|o| self.forbidden_category.as_deref() != Some(o.category.as_str()))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let name = pick(r, &candidates).name.clone();
        self.objects.push(name.clone());
        Some(name)
    }

    fn add_row(&mut self, row: Relationship, is_evidence: bool) {
        if self.rows.contains(&row) {
            return;
        }
        if is_evidence {
            self.evidence.push(row.clone());
        }
        self.rows.push(row);
    }

    /// Records and emits an attribute row.
    fn set_attr(&mut self, object: &str, category: &str, value: &str, is_evidence: bool) {
        self.add_object(object);
        let slot = self.attrs.entry(object.to_string()).or_default();
        if slot.contains_key(category) {
            return;
        }
        slot.insert(category.to_string(), value.to_string());
        self.add_row(Relationship::attribute(object, value), is_evidence);
    }

    /// A texture relation row between two present objects, honoring the
    /// person-relation rule (holding/wearing need a person subject).
    fn make_relation_row(&self, subject: &str, object: &str, r: &mut impl Rng) -> Relationship {
        let subject_is_person = self.bank.category_of(subject) == Some("person");
        let object_is_person = self.bank.category_of(object) == Some("person");
        let rel = if subject_is_person && !object_is_person && r.random_bool(0.3) {
            pick(r, &PERSON_RELATIONS).to_string()
        } else {
            pick(r, &SPATIAL_RELATIONS).to_string()
        };
        Relationship::relation(subject, &rel, object)
    }

    fn relation_row_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_attribute()).count()
    }

    /// Pads the graph with distractor relation rows and random attribute
    /// rows without ever touching question uniqueness.
    fn fill_distractors(&mut self, spec: &WorldSpec, r: &mut impl Rng) {
        let target = r.random_range(spec.min_relations..=spec.max_relations);
        let mut guard = 0;
        while self.relation_row_count() < target && guard < 64 {
            guard += 1;
            // Prefer connecting existing objects; grow the object set
            // until a comfortable size.
            let grow = self.objects.len() < 3 || (self.objects.len() < 6 && r.random_bool(0.5));
            let (subject, object) = if grow {
                let existing = pick(r, &self.objects).clone();
                match self.add_new_object(r) {
                    Some(fresh) if r.random_bool(0.5) => (existing, fresh),
                    Some(fresh) => (fresh, existing),
                    None => continue,
                }
            } else {
                let a = pick(r, &self.objects).clone();
                let b = pick(r, &self.objects).clone();
                if a == b {
                    continue;
                }
                (a, b)
            };
            let row = self.make_relation_row(&subject, &object, r);
            if let Some((rel, obj)) = &self.forbidden_rel_obj {
                if row.predicate == *rel && row.object == *obj {
                    continue;
                }
            }
            self.add_row(row, false);
        }
        // Random attribute decoration.
        let object_names = self.objects.clone();
        for name in object_names {
            if self.no_random_attrs.contains(&name) {
                continue;
            }
            if !r.random_bool(spec.attribute_rate) {
                continue;
            }
            let category = *pick(r, &ATTR_CATEGORIES);
            let already = self
                .attrs
                .get(&name)
                .map(|m| m.contains_key(category))
                .unwrap_or(false);
            if already {
                continue;
            }
            let value = pick(r, &self.bank.attrs_in_category(category)).to_string();
            self.set_attr(&name, category, &value, false);
        }
    }

    /// Shuffles row order and returns (scene graph, evidence graph); the
    /// evidence keeps the scene graph's final ordering.
    fn finish(mut self, r: &mut impl Rng) -> (SceneGraph, SceneGraph) {
        use rand::seq::SliceRandom;
        self.rows.shuffle(r);
        let evidence: Vec<Relationship> = self
            .rows
            .iter()
            .filter(|row| self.evidence.contains(row))
            .cloned()
            .collect();
        (SceneGraph::new(self.rows), SceneGraph::new(evidence))
    }
}
