//! Small generated corpora whose labels follow from keyword agreement
//! between a sentence and a table cell.
//!
//! Every claim states a birthplace for a unique person. The evidence is a
//! sentence and an infobox-style cell about that person, plus a distractor
//! sentence about someone else:
//!
//! * `SUPPORTED`: sentence and cell both name the claimed city.
//! * `REFUTED`: sentence and cell agree on a different city.
//! * `NOT_ENOUGH_INFO`: sentence and cell disagree with each other.
//!
//! For every fourth verifiable claim the cell is golden but was not
//! retrieved, so the retrieval condition of the FEVEROUS score fails.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cell, ClaimRecord, EvidenceItem, Label, TableKind};

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "n", "r", "s", "l", "m"];
const OCCUPATIONS: &[&str] = &[
    "painter",
    "sailor",
    "chemist",
    "poet",
    "architect",
    "surgeon",
    "judge",
    "banker",
];

fn coined(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
        s.push_str(CODAS.choose(rng).expect("non-empty"));
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

fn distinct_names(
    rng: &mut ChaCha8Rng,
    n: usize,
    syllables: usize,
    taken: &mut std::collections::HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let name = coined(rng, syllables);
        if taken.insert(name.to_lowercase()) {
            out.push(name);
        }
    }
    out
}

fn pick_other<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], avoid: &[&str]) -> &'a str {
    loop {
        let c = pool.choose(rng).expect("non-empty pool");
        if !avoid.contains(&c.as_str()) {
            return c;
        }
    }
}

/// `n` claims cycling through the three labels, deterministic in `seed`.
pub fn synthetic_claims(n: usize, seed: u64) -> Vec<ClaimRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = std::collections::HashSet::new();
    let people = distinct_names(&mut rng, n + 1, 3, &mut taken);
    let cities = distinct_names(&mut rng, 12, 2, &mut taken);

    (0..n)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let person = &people[i];
            let claimed = cities.choose(&mut rng).expect("non-empty").as_str();
            let (in_sentence, in_cell) = match label {
                Label::Supported => (claimed, claimed),
                Label::Refuted => {
                    let c = pick_other(&mut rng, &cities, &[claimed]);
                    (c, c)
                }
                Label::NotEnoughInfo => {
                    let a = pick_other(&mut rng, &cities, &[claimed]);
                    let b = pick_other(&mut rng, &cities, &[claimed, a]);
                    (a, b)
                }
            };
            let other = &people[(i + 1) % people.len()];
            let job = OCCUPATIONS[rng.gen_range(0..OCCUPATIONS.len())];

            let id = format!("syn{i:03}");
            let sentence = EvidenceItem::sentence(format!("{id}_s0"), format!("{person} was born in {in_sentence}."));
            let cell = EvidenceItem::cell(
                format!("{id}_c0"),
                Cell {
                    cell_value: in_cell.to_string(),
                    row_header: "Birthplace".to_string(),
                    column_header: "Born".to_string(),
                    page_title: person.clone(),
                    table_kind: TableKind::Infobox,
                },
            );
            let distractor = EvidenceItem::sentence(format!("{id}_s1"), format!("{other} worked as a {job}."));

            let verifiable = label != Label::NotEnoughInfo;
            let cell_missed = verifiable && (i / 3) % 4 == 3;
            let golden = if verifiable {
                vec![sentence.clone().with_gold(true), cell.clone().with_gold(true)]
            } else {
                Vec::new()
            };
            let mut retrieved = vec![sentence.with_gold(verifiable)];
            if !cell_missed {
                retrieved.push(cell.with_gold(verifiable));
            }
            retrieved.push(distractor);
            ClaimRecord {
                claim_id: id,
                claim_text: format!("{person} was born in {claimed}."),
                label,
                retrieved,
                golden,
            }
        })
        .collect()
}
