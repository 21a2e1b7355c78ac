//! Writes the toy fixture: 20 documents, 10 claims, 16-dimensional synthetic
//! embeddings and two scripted mock oracles (one answering from gold, one
//! inverted).
//!
//! Usage: cargo run --example gen_toy_fixture [-- <out_dir>]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::PathBuf;

const DIM: usize = 16;
const DOCS: usize = 20;
const CLAIMS: usize = 10;
const SEED: u64 = 20240611;

const TOPICS: [&str; 10] = [
    "the city council budget",
    "a new vaccine trial",
    "the river flood barrier",
    "a football transfer fee",
    "the wildfire evacuation",
    "a satellite launch",
    "the minimum wage bill",
    "a museum theft",
    "the drought in the valley",
    "an election recount",
];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit((0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// A vector at moderate similarity to `anchor`.
fn near(rng: &mut ChaCha8Rng, anchor: &[f64], weight: f64) -> Vec<f64> {
    let noise = random_vec(rng);
    unit(anchor.iter().zip(&noise).map(|(a, n)| weight * a + (1.0 - weight) * n).collect())
}

fn emb(id: &str, space: &str, v: &[f64]) -> Value {
    let v: Vec<f32> = v.iter().map(|x| *x as f32).collect();
    json!({"id": id, "space": space, "vector": v})
}

fn mock_line(task: &str, claim: &str, cand: &str, class: &str, yes: f64, no: f64, none: f64) -> Value {
    let p = match class {
        "yes" => yes,
        "no" => no,
        _ => none,
    };
    let mut mass = serde_json::Map::new();
    mass.insert("yes".into(), json!(yes));
    mass.insert("no".into(), json!(no));
    if none > 0.0 {
        mass.insert("none".into(), json!(none));
    }
    json!({"task": task, "claim_id": claim, "candidate_id": cand, "class": class,
           "class_mass": mass, "generated_token_prob": p})
}

fn lines(values: &[Value]) -> String {
    let mut s = String::new();
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy"));
    std::fs::create_dir_all(&out).expect("create output dir");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut docs = Vec::new();
    let mut embeddings = Vec::new();
    // claim i draws its evidence from documents 2i and 2i+1
    let claim_text: Vec<Vec<f64>> = (0..CLAIMS).map(|_| random_vec(&mut rng)).collect();
    let claim_image: Vec<Vec<f64>> = (0..CLAIMS).map(|_| random_vec(&mut rng)).collect();
    let mut gold_sentences: Vec<Vec<String>> = vec![Vec::new(); CLAIMS];
    let mut gold_images: Vec<Vec<String>> = vec![Vec::new(); CLAIMS];

    for d in 0..DOCS {
        let doc_id = format!("d{d:02}");
        let owner = d / 2;
        let topic = TOPICS[owner];
        let n_sent = 3;
        let n_img = if d % 3 == 0 { 2 } else { 1 };
        let mut sentences = Vec::new();
        let mut texts = Vec::new();
        for s in 0..n_sent {
            let sid = format!("{doc_id}-s{s}");
            let text = format!("Report {d} line {s} covers {topic} with detail number {}.", rng.random_range(100..999));
            // the first sentence of each document is gold for its owner claim;
            // even documents contribute a second gold sentence
            let is_gold = s == 0 || (s == 1 && d % 2 == 0);
            let v = if is_gold {
                gold_sentences[owner].push(sid.clone());
                near(&mut rng, &claim_text[owner], 0.35)
            } else {
                near(&mut rng, &claim_text[owner], 0.25)
            };
            embeddings.push(emb(&sid, "text", &v));
            sentences.push(json!({"sent_id": sid, "text": text}));
            texts.push(text);
        }
        let mut images = Vec::new();
        for i in 0..n_img {
            let iid = format!("{doc_id}-i{i}");
            let is_gold = i == 0 && d % 2 == 0;
            let v = if is_gold {
                gold_images[owner].push(iid.clone());
                near(&mut rng, &claim_image[owner], 0.3)
            } else {
                near(&mut rng, &claim_image[owner], 0.2)
            };
            embeddings.push(emb(&iid, "crossmodal", &v));
            images.push(json!({"image_id": iid, "uri": format!("file://images/{iid}.jpg"), "alt_text": format!("Photo about {topic}")}));
        }
        // the last two documents arrive unsegmented
        let doc = if d >= DOCS - 2 {
            json!({"doc_id": doc_id, "raw_text": texts.join(" "), "images": images})
        } else {
            json!({"doc_id": doc_id, "sentences": sentences, "images": images})
        };
        docs.push(doc);
    }

    let labels = ["supported", "refuted", "nei"];
    let mut claims = Vec::new();
    for c in 0..CLAIMS {
        let cid = format!("c{c:02}");
        embeddings.push(emb(&cid, "text", &claim_text[c]));
        embeddings.push(emb(&cid, "crossmodal", &claim_image[c]));
        claims.push(json!({
            "claim_id": cid,
            "text": format!("Claim {c}: a statement about {}.", TOPICS[c]),
            "gold_label": labels[c % 3],
            "gold_sentence_ids": gold_sentences[c],
            "gold_image_ids": gold_images[c],
        }));
    }

    // perfect oracle: Yes on gold evidence, No elsewhere; verdicts from gold labels
    let mut perfect = Vec::new();
    let mut adversarial = Vec::new();
    for c in 0..CLAIMS {
        let cid = format!("c{c:02}");
        let gold: Vec<&String> = gold_sentences[c].iter().chain(&gold_images[c]).collect();
        for id in &gold {
            let y = rng.random_range(0.70..0.95);
            perfect.push(mock_line("relevance", &cid, id, "yes", y, 1.0 - y - 0.02, 0.0));
            let n = rng.random_range(0.70..0.95);
            adversarial.push(mock_line("relevance", &cid, id, "no", 1.0 - n - 0.02, n, 0.0));
        }
        perfect.push(mock_line("relevance", &cid, "*", "no", 0.1, 0.85, 0.0));
        adversarial.push(mock_line("relevance", &cid, "*", "yes", 0.8, 0.15, 0.0));

        let (verify, suff, stance) = match labels[c % 3] {
            "supported" => (("yes", 0.8, 0.1, 0.05), ("yes", 0.9, 0.05), Some(("yes", 0.85, 0.1))),
            "refuted" => (("no", 0.1, 0.8, 0.05), ("yes", 0.9, 0.05), Some(("no", 0.1, 0.85))),
            _ => (("none", 0.1, 0.1, 0.75), ("no", 0.2, 0.75), None),
        };
        perfect.push(mock_line("verify", &cid, "*", verify.0, verify.1, verify.2, verify.3));
        perfect.push(mock_line("sufficiency", &cid, "*", suff.0, suff.1, suff.2, 0.0));
        if let Some(st) = stance {
            perfect.push(mock_line("stance", &cid, "*", st.0, st.1, st.2, 0.0));
        }
    }

    let write = |name: &str, body: String| std::fs::write(out.join(name), body).expect("write fixture file");
    write("corpus.jsonl", lines(&docs));
    write("claims.jsonl", lines(&claims));
    write("embeddings.jsonl", lines(&embeddings));
    write("mock_perfect.jsonl", lines(&perfect));
    write("mock_adversarial.jsonl", lines(&adversarial));
    println!("wrote toy fixture to {}", out.display());
}
