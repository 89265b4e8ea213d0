use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::Oracle;
use super::site::build_index;
use super::{FieldDef, FormDef, LinkDef, PageDef, Planted, RevealDef, SandboxError, SiteManifest, SiteParams, TaskDef};
use crate::pipeline::GoldAnswer;
use crate::tokens::Counter;

// Filler never uses the words that appear in questions and answer sentences.
const VOCAB: &[&str] = &[
    "the", "river", "morning", "quiet", "stone", "garden", "market", "season", "village", "harbor", "window",
    "light", "evening", "traveler", "bridge", "valley", "story", "weather", "field", "hill", "road", "north",
    "south", "old", "new", "small", "large", "green", "gray", "warm", "cold", "slowly", "often", "near",
    "across", "under", "beside", "through", "many", "few", "people", "workers", "families", "boats", "trees",
    "birds", "songs", "letters", "walls", "roofs", "gathered", "walked", "watched", "carried", "built",
    "painted", "remembered", "described", "visited", "followed", "and", "with", "along", "before", "after",
    "during", "between", "because", "while", "every", "some", "each", "their", "long", "short", "bright", "soft",
];

const KINDS: &[&str] = &[
    "lantern", "compass", "teapot", "kettle", "clock", "sextant", "loom", "anvil", "telescope", "barometer",
    "quill", "bell", "astrolabe", "spindle", "chisel", "mirror",
];

const SYLLABLES: &[&str] = &[
    "vel", "mor", "ka", "tri", "zan", "lo", "quen", "dar", "ish", "pel", "ru", "om", "sta", "fen", "gor", "al",
    "bri", "nex", "tu", "yor",
];

const REVEAL_LABEL: &str = "Show details";
const FIELD_NAME: &str = "key";
const FIELD_LABEL: &str = "Registry key";

/// Deterministically generate a site for `(seed, params)`.
pub fn generate_site(seed: u64, params: SiteParams) -> Result<SiteManifest, SandboxError> {
    if params.n_pages < 2 {
        return Err(SandboxError::InvalidParams(format!("n_pages must be at least 2, got {}", params.n_pages)));
    }
    let content = params.n_pages - 1;
    if params.n_dynamic > content {
        return Err(SandboxError::InvalidParams(format!(
            "n_dynamic = {} exceeds the {content} content pages",
            params.n_dynamic
        )));
    }
    if params.n_forms > params.n_dynamic {
        return Err(SandboxError::InvalidParams(format!(
            "n_forms = {} exceeds n_dynamic = {}",
            params.n_forms, params.n_dynamic
        )));
    }

    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        counter: Counter::default(),
        names: HashSet::new(),
        codes: HashSet::new(),
        keys: HashSet::new(),
    };

    let mut kinds: Vec<Planted> = (0..content)
        .map(|i| {
            if i < params.n_forms {
                Planted::Form
            } else if i < params.n_dynamic {
                Planted::Reveal
            } else {
                Planted::Static
            }
        })
        .collect();
    kinds.shuffle(&mut g.rng);

    let mut pages = BTreeMap::new();
    let mut tasks = Vec::new();
    let mut home_links = Vec::new();
    for (i, &planted) in kinds.iter().enumerate() {
        let n = i + 1;
        let path = format!("/p/{n}");
        let next = format!("/p/{}", n % content + 1);
        let subject = g.subject();
        let answer = g.code();
        let answer_sentence = format!("The catalog code of the {subject} is {answer}.");
        let intro = match planted {
            Planted::Form => format!(
                "Records for the {subject} are kept in the registry. Use the lookup below with the registry key."
            ),
            _ => format!("This entry describes the {subject} and its history."),
        };
        let title = match planted {
            Planted::Form => format!("{} registry", capitalize(&subject)),
            _ => capitalize(&subject),
        };
        let mut page = PageDef {
            title: title.clone(),
            blocks: vec![intro],
            links: vec![
                LinkDef {
                    label: "Back to directory".into(),
                    target_path: "/home".into(),
                },
                LinkDef {
                    label: "Next entry".into(),
                    target_path: next,
                },
            ],
            reveals: Vec::new(),
            forms: Vec::new(),
        };
        let mut question = format!("What is the catalog code of the {subject}?");
        match planted {
            Planted::Static => {
                g.pad(&mut page.blocks, &title, params.long_page_tokens, &answer_sentence);
                let at = g.rng.random_range(1..=page.blocks.len());
                page.blocks.insert(at, answer_sentence);
            }
            Planted::Reveal => {
                g.pad(&mut page.blocks, &title, params.long_page_tokens, "");
                page.reveals.push(RevealDef {
                    toggle_label: REVEAL_LABEL.into(),
                    hidden_text: answer_sentence,
                });
            }
            Planted::Form => {
                g.pad(&mut page.blocks, &title, params.long_page_tokens, "");
                let key = g.key();
                let record_path = format!("/records/{key}");
                let record_title = format!("Registry record {key}");
                let mut record = PageDef {
                    title: record_title.clone(),
                    blocks: vec![format!("Registry record for the {subject}.")],
                    links: vec![LinkDef {
                        label: "Back to directory".into(),
                        target_path: "/home".into(),
                    }],
                    reveals: Vec::new(),
                    forms: Vec::new(),
                };
                g.pad(&mut record.blocks, &record_title, params.long_page_tokens, &answer_sentence);
                let at = g.rng.random_range(1..=record.blocks.len());
                record.blocks.insert(at, answer_sentence);
                pages.insert(record_path.clone(), record);
                page.forms.push(FormDef {
                    fields: vec![FieldDef {
                        name: FIELD_NAME.into(),
                        label: FIELD_LABEL.into(),
                    }],
                    route: BTreeMap::from([(key.clone(), record_path)]),
                });
                question = format!("What is the catalog code of the {subject} filed under registry key {key}?");
            }
        }
        home_links.push(LinkDef {
            label: title,
            target_path: path.clone(),
        });
        pages.insert(path.clone(), page);
        let task_id = format!("s{seed}-t{n:03}");
        tasks.push(TaskDef {
            task_id: task_id.clone(),
            question,
            gold: GoldAnswer {
                task_id,
                answer,
                aliases: Vec::new(),
            },
            required_actions: Vec::new(),
            host_path: path,
            planted,
            subject,
        });
    }
    pages.insert(
        "/home".into(),
        PageDef {
            title: "Directory".into(),
            blocks: vec!["Welcome to the directory. Each entry below describes one item in the collection.".into()],
            links: home_links,
            reveals: Vec::new(),
            forms: Vec::new(),
        },
    );

    let index = build_index(&pages);
    let mut manifest = SiteManifest {
        seed,
        params,
        pages,
        index,
        tasks,
    };
    let oracle = Oracle::new(&manifest);
    let required: Vec<_> = manifest
        .tasks
        .iter()
        .map(|t| oracle.minimal_toolset(t).unwrap_or_default())
        .collect();
    drop(oracle);
    for (t, r) in manifest.tasks.iter_mut().zip(required) {
        t.required_actions = r;
    }
    Ok(manifest)
}

struct Gen {
    rng: ChaCha8Rng,
    counter: Counter,
    names: HashSet<String>,
    codes: HashSet<String>,
    keys: HashSet<String>,
}

impl Gen {
    fn subject(&mut self) -> String {
        loop {
            let n = self.rng.random_range(2..=3);
            let name: String = (0..n).map(|_| *SYLLABLES.choose(&mut self.rng).unwrap()).collect();
            let kind = KINDS.choose(&mut self.rng).unwrap();
            if VOCAB.contains(&name.as_str()) || KINDS.contains(&name.as_str()) {
                continue;
            }
            let subject = format!("{} {kind}", capitalize(&name));
            // names are unique on their own so a one-word search finds one page
            if self.names.insert(name) {
                return subject;
            }
        }
    }

    fn code(&mut self) -> String {
        loop {
            let a = self.rng.random_range(b'A'..=b'Z') as char;
            let b = self.rng.random_range(b'A'..=b'Z') as char;
            let code = format!("{a}{b}-{:04}", self.rng.random_range(1000..10000));
            if self.codes.insert(code.clone()) {
                return code;
            }
        }
    }

    fn key(&mut self) -> String {
        loop {
            let k = self.rng.random_range(10000..100000).to_string();
            if self.keys.insert(k.clone()) {
                return k;
            }
        }
    }

    fn sentence(&mut self) -> String {
        let n = self.rng.random_range(8..=14);
        let words: Vec<&str> = (0..n).map(|_| *VOCAB.choose(&mut self.rng).unwrap()).collect();
        format!("{}.", capitalize(&words.join(" ")))
    }

    fn filler_block(&mut self) -> String {
        let n = self.rng.random_range(3..=6);
        (0..n).map(|_| self.sentence()).collect::<Vec<_>>().join(" ")
    }

    /// Append filler until title, blocks and `extra` together reach `target` tokens.
    fn pad(&mut self, blocks: &mut Vec<String>, title: &str, target: u64, extra: &str) {
        // rendered text is roughly "# title" + blocks joined by blank lines
        let mut size = self.counter.count(title) + 1 + self.counter.count(extra);
        size += blocks.iter().map(|b| self.counter.count(b) + 1).sum::<u64>();
        while size < target || blocks.len() < 2 {
            let b = self.filler_block();
            size += self.counter.count(&b) + 1;
            blocks.push(b);
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::ToolName;

    #[test]
    fn same_seed_same_bytes() {
        let p = SiteParams::default();
        assert_eq!(generate_site(1, p).unwrap().to_json(), generate_site(1, p).unwrap().to_json());
        assert_ne!(generate_site(1, p).unwrap().to_json(), generate_site(2, p).unwrap().to_json());
    }

    #[test]
    fn invalid_params() {
        let bad = |n_pages, n_dynamic, n_forms| {
            let p = SiteParams { n_pages, n_dynamic, n_forms, long_page_tokens: 100 };
            matches!(generate_site(0, p), Err(SandboxError::InvalidParams(_)))
        };
        assert!(bad(1, 0, 0));
        assert!(bad(3, 3, 0));
        assert!(bad(5, 1, 2));
        assert!(!bad(2, 1, 1));
    }

    #[test]
    fn one_task_per_content_page_with_planted_kinds() {
        let p = SiteParams { n_pages: 10, n_dynamic: 4, n_forms: 2, long_page_tokens: 300 };
        let m = generate_site(3, p).unwrap();
        assert_eq!(m.tasks.len(), 9);
        let count = |k| m.tasks.iter().filter(|t| t.planted == k).count();
        assert_eq!((count(Planted::Static), count(Planted::Reveal), count(Planted::Form)), (5, 2, 2));
        // record pages are extra and unlinked
        assert_eq!(m.pages.len(), 10 + 2);
        assert!(m.check().is_ok());
    }

    #[test]
    fn required_actions_follow_planting() {
        let m = generate_site(11, SiteParams::default()).unwrap();
        use ToolName::*;
        for t in &m.tasks {
            let want = match t.planted {
                Planted::Static => vec![Search, Visit],
                Planted::Reveal => vec![Search, Visit, Click],
                Planted::Form => vec![Search, Visit, Click, Fill],
            };
            assert_eq!(t.required_actions, want, "{}", t.task_id);
        }
    }

    #[test]
    fn each_answer_planted_exactly_once() {
        let m = generate_site(5, SiteParams::default()).unwrap();
        for t in &m.tasks {
            let mut hits = 0;
            for page in m.pages.values() {
                hits += page.blocks.iter().filter(|b| b.contains(&t.gold.answer)).count();
                hits += page.reveals.iter().filter(|r| r.hidden_text.contains(&t.gold.answer)).count();
            }
            assert_eq!(hits, 1, "{}", t.task_id);
        }
    }
}
