#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deckagent_core::document::ELEMENTS_FILE;
use deckagent_core::knowledge::BuildOptions;
use deckagent_core::llm::ScriptedBackend;
use deckagent_core::{
    build_knowledge_base, load_document, merge_document, Document, KnowledgeBase, PromptLog, DEFAULT_TAU,
};

pub const DECK_QUESTION: &str = "According to the flowchart, what effect do advisor attrition and pricing pressure lead to?";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn deck_dir() -> PathBuf {
    fixtures().join("deck")
}

/// The shipped 4-page deck after merging.
pub fn merged_deck() -> Document {
    let raw = load_document(deck_dir()).expect("fixture loads");
    merge_document(&raw, DEFAULT_TAU).expect("fixture merges").0
}

pub fn scripted(name: &str, in_flight: usize) -> ScriptedBackend {
    ScriptedBackend::from_file(deck_dir().join(name))
        .expect("script loads")
        .with_max_in_flight(in_flight)
}

pub fn build_deck_kb(doc: &Document, in_flight: usize, kb_dir: Option<&Path>) -> KnowledgeBase {
    let backend = scripted("build.json", in_flight);
    let options = BuildOptions {
        kb_dir: kb_dir.map(Path::to_path_buf),
        ..Default::default()
    };
    build_knowledge_base(doc, &backend, &options, &PromptLog::new()).expect("scripted build succeeds")
}

pub fn blank_png(path: &Path, w: u32, h: u32) {
    image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]))
        .save(path)
        .expect("write png");
}

/// Writes a document of blank pages with the given per-page element texts.
pub fn write_text_doc(dir: &Path, doc_id: &str, pages: &[Vec<&str>]) {
    std::fs::create_dir_all(dir).unwrap();
    let mut manifest_pages = Vec::new();
    let mut elements = Vec::new();
    for (i, texts) in pages.iter().enumerate() {
        let index = i as u32 + 1;
        let raster = format!("page-{index}.png");
        blank_png(&dir.join(&raster), 200, 120);
        manifest_pages.push(serde_json::json!({"index": index, "raster": raster, "width": 200, "height": 120}));
        for (j, t) in texts.iter().enumerate() {
            // rows 30 px apart so nothing merges at the default threshold
            let y = 4 + 30 * j as u32;
            elements.push(serde_json::json!({
                "element_id": format!("p{index}-e{}", j + 1),
                "page_index": index,
                "type": "text",
                "bbox": [10, y, 190, y + 10],
                "text": t,
            }));
        }
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::json!({"doc_id": doc_id, "pages": manifest_pages}).to_string(),
    )
    .unwrap();
    std::fs::write(dir.join(ELEMENTS_FILE), serde_json::Value::Array(elements).to_string()).unwrap();
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
