//! The closed concept inventory behind the synthetic world, plus the
//! lexicon used to parse rendered scene-graph phrases back into structure.
//!
//! Word classes are kept disjoint on purpose: relation words never collide
//! with object/attribute/value/text words, attribute words never collide
//! with object names, and object names are prefix-free at the word level.
//! Those properties are what make greedy longest-match parsing lossless,
//! and `ConceptBank::validate` enforces them so a modified bank fails fast
//! instead of corrupting round-trips.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scene letters and display names, in benchmark order.
pub const SCENES: [(char, &str); 6] = [
    ('a', "market"),
    ('b', "office"),
    ('c', "home"),
    ('d', "transit"),
    ('e', "sports"),
    ('f', "outdoors"),
];

/// Function-task letters in benchmark order: object recognition, attribute
/// recognition, relation reasoning, logic, knowledge, scene text.
pub const FUNCTIONS: [char; 6] = ['o', 'a', 'r', 'l', 'k', 's'];

/// Predicate used for knowledge rows ("chair is used for sitting").
pub const KNOWLEDGE_PREDICATE: &str = "is used for";
/// Predicate used for scene-text rows ("sign says exit").
pub const TEXT_PREDICATE: &str = "says";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ObjectDef {
    pub name: String,
    pub category: String,
    /// Scenes the object may appear in. Unique-pool objects list exactly one.
    pub scenes: Vec<char>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct AttributeDef {
    pub word: String,
    /// One of "color", "material", "size".
    pub category: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct KnowledgeFact {
    pub subject: String,
    pub property: String,
    pub value: String,
}

/// The complete closed-world inventory. Everything the generator emits —
/// graphs, questions, answers — is assembled from these lists, so the
/// vocabulary derived from a bank is total over the corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ConceptBank {
    /// Objects appearing in exactly one scene; their names are that scene's
    /// unique answer pool.
    pub unique_objects: Vec<ObjectDef>,
    /// Objects shared across several scenes; answers drawn from these are
    /// "common" and allowed in any task.
    pub shared_objects: Vec<ObjectDef>,
    pub attributes: Vec<AttributeDef>,
    /// Spatial/interactional relation phrases.
    pub relations: Vec<String>,
    pub ocr_lexicon: Vec<String>,
    pub knowledge_facts: Vec<KnowledgeFact>,
}

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "purple"];
const MATERIALS: [&str; 5] = ["wooden", "metal", "plastic", "glass", "leather"];
const SIZES: [&str; 4] = ["small", "large", "tiny", "huge"];

/// Relations usable in relation-reasoning questions ("what is near the X").
pub const SPATIAL_RELATIONS: [&str; 11] = [
    "near", "on", "under", "behind", "beside", "above", "inside", "facing", "next to",
    "left of", "right of",
];
/// Person-only relations; used as graph texture, never queried.
pub const PERSON_RELATIONS: [&str; 2] = ["holding", "wearing"];

/// Words appearing in question templates (questions are free text and are
/// never lexicon-parsed, but the vocabulary must cover them).
pub const QUESTION_WORDS: [&str; 22] = [
    "what", "is", "the", "a", "are", "and", "or", "do", "does", "say", "different", "than",
    "have", "in", "common", "thing", "that", "used", "for", "same", "yes", "no",
];

pub const ATTR_CATEGORIES: [&str; 3] = ["color", "material", "size"];

impl ConceptBank {
    /// The default six-scene world.
    pub fn default_world() -> Self {
        let u = |name: &str, cat: &str, scene: char| ObjectDef {
            name: name.into(),
            category: cat.into(),
            scenes: vec![scene],
        };
        let s = |name: &str, cat: &str, scenes: &str| ObjectDef {
            name: name.into(),
            category: cat.into(),
            scenes: scenes.chars().collect(),
        };
        let unique_objects = vec![
            // market
            u("market stall", "structure", 'a'),
            u("cash register", "device", 'a'),
            u("shopping cart", "container", 'a'),
            u("fruit crate", "container", 'a'),
            u("price tag", "signage", 'a'),
            u("butcher knife", "tool", 'a'),
            u("scale", "device", 'a'),
            u("awning", "structure", 'a'),
            // office
            u("computer monitor", "device", 'b'),
            u("keyboard", "device", 'b'),
            u("swivel chair", "furniture", 'b'),
            u("filing cabinet", "furniture", 'b'),
            u("stapler", "tool", 'b'),
            u("whiteboard", "signage", 'b'),
            u("printer", "device", 'b'),
            u("desk lamp", "device", 'b'),
            // home
            u("sofa", "furniture", 'c'),
            u("television", "device", 'c'),
            u("coffee table", "furniture", 'c'),
            u("refrigerator", "device", 'c'),
            u("stove", "device", 'c'),
            u("bed", "furniture", 'c'),
            u("pillow", "item", 'c'),
            u("bookshelf", "furniture", 'c'),
            // transit
            u("bus", "vehicle", 'd'),
            u("train", "vehicle", 'd'),
            u("platform", "structure", 'd'),
            u("ticket machine", "device", 'd'),
            u("turnstile", "structure", 'd'),
            u("subway map", "signage", 'd'),
            u("handrail", "structure", 'd'),
            u("luggage rack", "container", 'd'),
            // sports
            u("basketball", "gear", 'e'),
            u("goal post", "structure", 'e'),
            u("scoreboard", "signage", 'e'),
            u("whistle", "tool", 'e'),
            u("jersey", "clothing", 'e'),
            u("bleachers", "furniture", 'e'),
            u("tennis racket", "gear", 'e'),
            u("helmet", "clothing", 'e'),
            // outdoors
            u("tent", "structure", 'f'),
            u("campfire", "item", 'f'),
            u("hiking boot", "clothing", 'f'),
            u("canoe", "vehicle", 'f'),
            u("fishing rod", "tool", 'f'),
            u("picnic blanket", "gear", 'f'),
            u("trail marker", "signage", 'f'),
            u("backpack", "container", 'f'),
        ];
        let shared_objects = vec![
            s("sign", "signage", "abcdef"),
            s("banner", "signage", "ade"),
            s("poster", "signage", "bcd"),
            s("screen", "device", "bde"),
            s("clock", "device", "bcde"),
            s("trash can", "container", "abde"),
            s("bench", "furniture", "def"),
            s("bottle", "container", "acef"),
            s("cup", "container", "bc"),
            s("bag", "container", "ad"),
            s("box", "container", "abc"),
            s("chair", "furniture", "acf"),
            s("table", "furniture", "abf"),
            s("lamp", "device", "cd"),
            s("window", "structure", "bcd"),
            s("door", "structure", "bcd"),
            s("phone", "device", "bc"),
            s("umbrella", "tool", "af"),
            s("ladder", "tool", "af"),
            s("rope", "tool", "ef"),
            s("bucket", "container", "af"),
            s("vending machine", "device", "bde"),
            s("man", "person", "abcdef"),
            s("woman", "person", "abcdef"),
            s("child", "person", "abcdef"),
        ];
        let mut attributes = Vec::new();
        for c in COLORS {
            attributes.push(AttributeDef { word: c.into(), category: "color".into() });
        }
        for m in MATERIALS {
            attributes.push(AttributeDef { word: m.into(), category: "material".into() });
        }
        for z in SIZES {
            attributes.push(AttributeDef { word: z.into(), category: "size".into() });
        }
        let relations = SPATIAL_RELATIONS
            .iter()
            .chain(PERSON_RELATIONS.iter())
            .map(|r| r.to_string())
            .collect();
        let ocr_lexicon = [
            "exit", "sale", "stop", "metro", "open", "closed", "push", "pull", "welcome",
            "caution", "fresh", "discount", "arrivals", "tickets", "score", "menu",
        ]
        .iter()
        .map(|w| w.to_string())
        .collect();
        let fact = |subject: &str, value: &str| KnowledgeFact {
            subject: subject.into(),
            property: KNOWLEDGE_PREDICATE.into(),
            value: value.into(),
        };
        let knowledge_facts = vec![
            // market
            fact("butcher knife", "cutting"),
            fact("scale", "weighing"),
            fact("cash register", "payment"),
            fact("shopping cart", "carrying"),
            fact("fruit crate", "storage"),
            fact("awning", "shade"),
            fact("market stall", "trade"),
            fact("price tag", "pricing"),
            // office
            fact("computer monitor", "display"),
            fact("keyboard", "typing"),
            fact("printer", "printing"),
            fact("stapler", "binding"),
            fact("whiteboard", "writing"),
            fact("desk lamp", "lighting"),
            fact("swivel chair", "sitting"),
            fact("filing cabinet", "archiving"),
            // home
            fact("sofa", "sitting"),
            fact("television", "watching"),
            fact("stove", "cooking"),
            fact("refrigerator", "cooling"),
            fact("bed", "sleeping"),
            fact("pillow", "resting"),
            fact("bookshelf", "storage"),
            fact("coffee table", "serving"),
            // transit
            fact("bus", "transport"),
            fact("train", "travel"),
            fact("platform", "boarding"),
            fact("ticket machine", "ticketing"),
            fact("turnstile", "entry"),
            fact("handrail", "support"),
            fact("luggage rack", "storage"),
            fact("subway map", "navigation"),
            // sports
            fact("whistle", "signaling"),
            fact("scoreboard", "scoring"),
            fact("basketball", "dribbling"),
            fact("tennis racket", "swinging"),
            fact("helmet", "protection"),
            fact("jersey", "uniform"),
            fact("bleachers", "seating"),
            fact("goal post", "aiming"),
            // outdoors
            fact("tent", "shelter"),
            fact("campfire", "warmth"),
            fact("canoe", "paddling"),
            fact("fishing rod", "angling"),
            fact("hiking boot", "trekking"),
            fact("backpack", "carrying"),
            fact("picnic blanket", "lounging"),
            fact("trail marker", "navigation"),
        ];
        ConceptBank {
            unique_objects,
            shared_objects,
            attributes,
            relations,
            ocr_lexicon,
            knowledge_facts,
        }
    }

    pub fn all_objects(&self) -> impl Iterator<Item = &ObjectDef> {
        self.unique_objects.iter().chain(self.shared_objects.iter())
    }

    /// Unique-pool object names for one scene (that scene's exclusive
    /// answer vocabulary).
    pub fn unique_pool(&self, scene: char) -> BTreeSet<String> {
        self.unique_objects
            .iter()
            .filter(|o| o.scenes.contains(&scene))
            .map(|o| o.name.clone())
            .collect()
    }

    /// All objects available in a scene, uniques first.
    pub fn scene_objects(&self, scene: char) -> Vec<&ObjectDef> {
        self.all_objects().filter(|o| o.scenes.contains(&scene)).collect()
    }

    pub fn category_of(&self, name: &str) -> Option<&str> {
        self.all_objects()
            .find(|o| o.name == name)
            .map(|o| o.category.as_str())
    }

    pub fn attr_category(&self, word: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.word == word)
            .map(|a| a.category.as_str())
    }

    pub fn attrs_in_category(&self, category: &str) -> Vec<&str> {
        self.attributes
            .iter()
            .filter(|a| a.category == category)
            .map(|a| a.word.as_str())
            .collect()
    }

    pub fn facts_for_scene(&self, scene: char) -> Vec<&KnowledgeFact> {
        self.knowledge_facts
            .iter()
            .filter(|f| {
                self.all_objects()
                    .any(|o| o.name == f.subject && o.scenes.contains(&scene))
            })
            .collect()
    }

    /// Every word that can appear in a rendered phrase, question, or answer.
    pub fn all_words(&self) -> BTreeSet<String> {
        let mut words: BTreeSet<String> = BTreeSet::new();
        let add_phrase = |p: &str, set: &mut BTreeSet<String>| {
            for w in p.split_whitespace() {
                set.insert(w.to_string());
            }
        };
        for o in self.all_objects() {
            add_phrase(&o.name, &mut words);
            words.insert(o.category.clone());
        }
        for a in &self.attributes {
            words.insert(a.word.clone());
        }
        for r in &self.relations {
            add_phrase(r, &mut words);
        }
        add_phrase(KNOWLEDGE_PREDICATE, &mut words);
        add_phrase(TEXT_PREDICATE, &mut words);
        for w in &self.ocr_lexicon {
            words.insert(w.clone());
        }
        for f in &self.knowledge_facts {
            words.insert(f.value.clone());
        }
        for q in QUESTION_WORDS {
            words.insert(q.to_string());
        }
        for c in ATTR_CATEGORIES {
            words.insert(c.to_string());
        }
        words
    }

    /// Words that may appear in answers; the answer vocabulary is built
    /// from these (plus begin/end markers).
    pub fn answer_words(&self) -> BTreeSet<String> {
        let mut words = BTreeSet::new();
        for o in self.all_objects() {
            for w in o.name.split_whitespace() {
                words.insert(w.to_string());
            }
        }
        for a in &self.attributes {
            words.insert(a.word.clone());
        }
        for w in &self.ocr_lexicon {
            words.insert(w.clone());
        }
        for w in ["yes", "no", "color", "material", "size"] {
            words.insert(w.to_string());
        }
        words
    }

    /// Checks the structural invariants that the generator, the codec
    /// parser, and the split builders all rely on.
    pub fn validate(&self) -> Result<()> {
        if self.unique_objects.is_empty()
            || self.shared_objects.is_empty()
            || self.attributes.is_empty()
            || self.relations.is_empty()
            || self.ocr_lexicon.is_empty()
            || self.knowledge_facts.is_empty()
        {
            return Err(Error::config("concept bank has an empty inventory list"));
        }
        // Unique-pool objects belong to exactly one scene; no name is in
        // both pools or in two scenes' unique pools.
        let mut seen: BTreeMap<&str, &ObjectDef> = BTreeMap::new();
        for o in self.all_objects() {
            if o.scenes.is_empty() {
                return Err(Error::config(format!("object '{}' has no scenes", o.name)));
            }
            if let Some(prev) = seen.insert(o.name.as_str(), o) {
                return Err(Error::config(format!(
                    "object '{}' defined twice (pools {:?} and {:?})",
                    o.name, prev.scenes, o.scenes
                )));
            }
        }
        for o in &self.unique_objects {
            if o.scenes.len() != 1 {
                return Err(Error::config(format!(
                    "unique-pool object '{}' must belong to exactly one scene",
                    o.name
                )));
            }
        }
        let reserved = ["[g]", "[s]", "[q]", "[a]", "[e]", "<begin>", "<end>"];
        for w in self.all_words() {
            if reserved.contains(&w.as_str()) {
                return Err(Error::config(format!("word '{w}' collides with a control token")));
            }
        }

        // Word-class disjointness; see module docs.
        let object_words: BTreeSet<&str> = self
            .all_objects()
            .flat_map(|o| o.name.split_whitespace())
            .collect();
        let attr_words: BTreeSet<&str> = self.attributes.iter().map(|a| a.word.as_str()).collect();
        let relation_words: BTreeSet<&str> = self
            .relations
            .iter()
            .flat_map(|r| r.split_whitespace())
            .chain(KNOWLEDGE_PREDICATE.split_whitespace())
            .chain(TEXT_PREDICATE.split_whitespace())
            .collect();
        let value_words: BTreeSet<&str> =
            self.knowledge_facts.iter().map(|f| f.value.as_str()).collect();
        let ocr_words: BTreeSet<&str> = self.ocr_lexicon.iter().map(|s| s.as_str()).collect();

        let disjoint = |a: &BTreeSet<&str>, b: &BTreeSet<&str>, what: &str| -> Result<()> {
            if let Some(w) = a.intersection(b).next() {
                return Err(Error::config(format!("word '{w}' breaks {what} disjointness")));
            }
            Ok(())
        };
        disjoint(&relation_words, &object_words, "relation/object")?;
        disjoint(&relation_words, &attr_words, "relation/attribute")?;
        disjoint(&relation_words, &value_words, "relation/value")?;
        disjoint(&relation_words, &ocr_words, "relation/text")?;
        disjoint(&attr_words, &object_words, "attribute/object")?;
        disjoint(&attr_words, &value_words, "attribute/value")?;
        disjoint(&attr_words, &ocr_words, "attribute/text")?;
        disjoint(&value_words, &object_words, "value/object")?;
        disjoint(&value_words, &ocr_words, "value/text")?;
        disjoint(&ocr_words, &object_words, "text/object")?;

        // Object names prefix-free at the word level, so longest-match
        // parsing can never strand a suffix.
        let names: Vec<Vec<&str>> = self
            .all_objects()
            .map(|o| o.name.split_whitespace().collect())
            .collect();
        for a in &names {
            for b in &names {
                if a.len() < b.len() && b[..a.len()] == a[..] {
                    return Err(Error::config(format!(
                        "object name '{}' is a prefix of '{}'",
                        a.join(" "),
                        b.join(" ")
                    )));
                }
            }
        }

        // Knowledge facts must name known objects and use the fixed predicate.
        for f in &self.knowledge_facts {
            if !object_words.is_empty() && self.category_of(&f.subject).is_none() {
                return Err(Error::config(format!("fact subject '{}' is not an object", f.subject)));
            }
            if f.property != KNOWLEDGE_PREDICATE {
                return Err(Error::config(format!("fact property '{}' unsupported", f.property)));
            }
        }
        Ok(())
    }
}

/// Parsing tables derived from a validated bank: longest-match lists for
/// object names and predicates, plus membership sets for the other classes.
#[derive(Debug, Clone)]
pub struct Lexicon {
    /// Object names as word vectors, longest first.
    objects: Vec<Vec<String>>,
    /// Relation phrases (including the knowledge/text predicates), longest first.
    predicates: Vec<Vec<String>>,
    attrs: BTreeSet<String>,
    values: BTreeSet<String>,
    ocr: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_bank(bank: &ConceptBank) -> Self {
        let mut objects: Vec<Vec<String>> = bank
            .all_objects()
            .map(|o| o.name.split_whitespace().map(str::to_string).collect())
            .collect();
        objects.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let mut predicates: Vec<Vec<String>> = bank
            .relations
            .iter()
            .map(|r| r.split_whitespace().map(str::to_string).collect())
            .collect();
        predicates.push(KNOWLEDGE_PREDICATE.split_whitespace().map(str::to_string).collect());
        predicates.push(TEXT_PREDICATE.split_whitespace().map(str::to_string).collect());
        predicates.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        Lexicon {
            objects,
            predicates,
            attrs: bank.attributes.iter().map(|a| a.word.clone()).collect(),
            values: bank.knowledge_facts.iter().map(|f| f.value.clone()).collect(),
            ocr: bank.ocr_lexicon.iter().cloned().collect(),
        }
    }

    pub fn is_attr(&self, word: &str) -> bool {
        self.attrs.contains(word)
    }

    pub fn is_value(&self, word: &str) -> bool {
        self.values.contains(word)
    }

    pub fn is_ocr(&self, word: &str) -> bool {
        self.ocr.contains(word)
    }

    /// Longest object name matching a prefix of `words`; returns its word count.
    pub fn match_object(&self, words: &[&str]) -> Option<usize> {
        self.objects
            .iter()
            .find(|name| {
                name.len() <= words.len() && name.iter().zip(words).all(|(a, b)| a == b)
            })
            .map(|name| name.len())
    }

    /// Longest predicate phrase matching a prefix of `words`.
    pub fn match_predicate(&self, words: &[&str]) -> Option<usize> {
        self.predicates
            .iter()
            .find(|p| p.len() <= words.len() && p.iter().zip(words).all(|(a, b)| a == b))
            .map(|p| p.len())
    }
}
