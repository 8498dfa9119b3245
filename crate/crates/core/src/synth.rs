//! Seeded synthetic logistics messages for hermetic tests and demos.
//!
//! Messages are short, informal, and label-correlated: each one mixes
//! optional actor/reason cue phrases, words from the cause name, and filler
//! tokens. Label frequencies follow a Zipf-like curve with every label
//! appearing at least once.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::AnnotatedMessage;
use crate::schema::{FrameLabel, LabelTaxonomy};

const FILLER: &[&str] = &[
    "đơn", "hàng", "giao", "ạ", "nhé", "giúp", "em", "anh", "chị", "rồi", "nay", "hôm", "lại", "báo", "bên",
    "mình", "với", "ck", "kt", "sđt", "nha", "đi", "cho", "đã", "chưa", "vì", "nên", "do", "ship", "mã", "vận",
    "ok", "check", "gấp", "luôn", "nhận", "gửi",
];

fn actor_cues(actor: &str) -> Vec<&'static str> {
    match actor {
        "Customer" => vec!["khách", "kh", "người nhận", "khách hàng"],
        "Shop" => vec!["shop", "chủ shop", "người bán"],
        "Delivery Service" => vec!["shipper", "bưu cục", "bên giao", "tài xế"],
        "External Factor" => vec!["trời", "khu vực", "tình hình"],
        _ => vec![],
    }
}

fn reason_cues(reason: &str) -> Vec<&'static str> {
    match reason {
        "Refused Delivery" => vec!["không nhận", "từ chối", "bom hàng"],
        "Unavailable" => vec!["không liên lạc được", "đi vắng", "không nghe máy"],
        "Changed Address" => vec!["đổi địa chỉ", "chuyển địa chỉ"],
        "Incorrect Information" => vec!["sai thông tin", "nhầm"],
        "Changed Order" => vec!["đổi đơn", "sửa đơn"],
        "Thay đổi thông tin" => vec!["thay đổi", "cập nhật"],
        "Stock Issue" => vec!["hết hàng", "kho"],
        "Packaging" => vec!["đóng gói", "gói hàng"],
        "Cancelled Order" => vec!["hủy đơn", "huỷ"],
        "Late Delivery" => vec!["giao trễ", "chậm"],
        "Damaged Goods" => vec!["hư hỏng", "bể"],
        "Staff Behavior" => vec!["thái độ", "nhân viên"],
        "Weather" => vec!["mưa", "thời tiết xấu"],
        "Traffic" => vec!["kẹt xe", "đường"],
        "Holiday" => vec!["nghỉ lễ", "lễ"],
        "Regulation" => vec!["quy định", "hải quan"],
        "System Outage" => vec!["lỗi hệ thống", "app lỗi"],
        _ => vec![],
    }
}

fn words(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(str::to_lowercase).collect()
}

fn sample_length(rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    if u < 0.02 {
        rng.random_range(1..=2)
    } else if u < 0.75 {
        rng.random_range(3..=10)
    } else if u < 0.985 {
        rng.random_range(11..=18)
    } else {
        rng.random_range(19..=49)
    }
}

fn compose_text(label: &FrameLabel, rng: &mut ChaCha8Rng) -> String {
    let len = sample_length(rng);
    let mut chunks: Vec<Vec<String>> = Vec::new();
    if rng.random_bool(0.8) {
        chunks.push(words(&label.cause));
    }
    let reasons = reason_cues(&label.reason);
    if rng.random_bool(0.6) {
        match reasons.choose(rng) {
            Some(cue) => chunks.push(words(cue)),
            None => chunks.push(words(&label.reason)),
        }
    }
    let actors = actor_cues(&label.actor);
    if rng.random_bool(0.5) {
        match actors.choose(rng) {
            Some(cue) => chunks.push(words(cue)),
            None => chunks.push(words(&label.actor)),
        }
    }
    chunks.shuffle(rng);
    let mut content: Vec<String> = chunks.into_iter().flatten().collect();
    content.truncate(len);
    while content.len() < len {
        let at = rng.random_range(0..=content.len());
        let filler = FILLER.choose(rng).expect("filler non-empty");
        content.insert(at, (*filler).to_string());
    }
    content.join(" ")
}

/// Generates `n` messages over the taxonomy's labels with ids `m0001`, `m0002`, ...
///
/// Texts are unique. Panics if `n` is smaller than the label count.
pub fn generate(taxonomy: &LabelTaxonomy, n: usize, seed: u64) -> Vec<AnnotatedMessage> {
    let labels = taxonomy.enumerate_labels();
    assert!(n >= labels.len(), "need at least one message per label");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ranks: Vec<usize> = (0..labels.len()).collect();
    ranks.shuffle(&mut rng);
    let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / ((r + 1) as f64).powf(1.1)).collect();
    let total: f64 = weights.iter().sum();

    let mut assigned: Vec<usize> = (0..labels.len()).collect();
    while assigned.len() < n {
        let mut u = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        assigned.push(pick);
    }
    assigned.shuffle(&mut rng);

    let width = n.to_string().len().max(4);
    let mut seen = HashSet::new();
    assigned
        .into_iter()
        .enumerate()
        .map(|(i, li)| {
            let label = labels[li].clone();
            let text = loop {
                let t = compose_text(&label, &mut rng);
                if seen.insert(t.clone()) {
                    break t;
                }
            };
            AnnotatedMessage {
                id: format!("m{:0width$}", i + 1),
                text,
                label,
            }
        })
        .collect()
}
