//! Documents, pages, elements and their canonical on-disk layout.
//!
//! A document directory holds:
//!
//! ```text
//! <docdir>/manifest.json   {doc_id, pages: [{index, raster, width, height}]}
//! <docdir>/elements.json   [{element_id, page_index, type, bbox: [x1, y1, x2, y2], text}]
//! <docdir>/<raster>.png    one raster per page
//! ```
//!
//! Coordinates are integer pixels in page-image space with the origin at the
//! top-left corner. Page indices are 1-based.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::write_json_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ELEMENTS_FILE: &str = "elements.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub const fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u32 {
        self.y2.saturating_sub(self.y1)
    }

    /// A box is degenerate when it has zero or negative extent on either axis.
    pub fn is_degenerate(&self) -> bool {
        self.x1 >= self.x2 || self.y1 >= self.y2
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

impl From<[u32; 4]> for BoundingBox {
    fn from(v: [u32; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Element category. Labels outside the known set are kept verbatim in `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ElementType {
    Text,
    Image,
    Chart,
    Table,
    Icon,
    Button,
    Other(String),
}

impl ElementType {
    pub fn label(&self) -> &str {
        match self {
            ElementType::Text => "text",
            ElementType::Image => "image",
            ElementType::Chart => "chart",
            ElementType::Table => "table",
            ElementType::Icon => "icon",
            ElementType::Button => "button",
            ElementType::Other(label) => label,
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, ElementType::Text)
    }
}

impl From<String> for ElementType {
    fn from(label: String) -> Self {
        match label.as_str() {
            "text" => ElementType::Text,
            "image" => ElementType::Image,
            "chart" => ElementType::Chart,
            "table" => ElementType::Table,
            "icon" => ElementType::Icon,
            "button" => ElementType::Button,
            _ => ElementType::Other(label),
        }
    }
}

impl From<&str> for ElementType {
    fn from(label: &str) -> Self {
        ElementType::from(label.to_string())
    }
}

impl From<ElementType> for String {
    fn from(t: ElementType) -> Self {
        t.label().to_string()
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One detected region on a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: String,
    pub page_index: u32,
    #[serde(rename = "type")]
    pub etype: ElementType,
    pub bbox: BoundingBox,
    /// Verbatim OCR text; empty for non-text regions.
    #[serde(rename = "text", default)]
    pub verbatim: String,
    /// Ids of the fragments this element was merged from, in reading order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl Element {
    pub fn new(
        element_id: impl Into<String>,
        page_index: u32,
        etype: ElementType,
        bbox: BoundingBox,
        verbatim: impl Into<String>,
    ) -> Self {
        Self {
            element_id: element_id.into(),
            page_index,
            etype,
            bbox,
            verbatim: verbatim.into(),
            sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub index: u32,
    /// Raster file name, relative to the document directory.
    pub raster: String,
    pub width: u32,
    pub height: u32,
    pub elements: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub pages: Vec<Page>,
    /// Directory rasters are resolved against.
    pub dir: PathBuf,
}

impl Document {
    pub fn page(&self, index: u32) -> Option<&Page> {
        let pos = usize::try_from(index).ok()?.checked_sub(1)?;
        self.pages.get(pos).filter(|p| p.index == index)
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn raster_path(&self, page: &Page) -> PathBuf {
        self.dir.join(&page.raster)
    }

    pub fn read_raster(&self, page: &Page) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.raster_path(page))
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.pages.iter().flat_map(|p| p.elements.iter())
    }

    pub fn element(&self, element_id: &str) -> Option<&Element> {
        self.elements().find(|e| e.element_id == element_id)
    }

    pub fn element_count(&self) -> usize {
        self.pages.iter().map(|p| p.elements.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    EmptyDocument,
    PageIndexGap,
    DuplicatePageIndex,
    ZeroPageSize,
    PageIndexOutOfRange,
    ElementPageMismatch,
    DegenerateBox,
    BoxOutsideRaster,
    DuplicateElementId,
    EmptyTextElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_index: Option<u32>,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.code, self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{file}: {message}")]
    Parse { file: PathBuf, message: String },
    #[error("{file}: page index gap after {after}")]
    PageIndexGap { file: PathBuf, after: u32 },
    #[error("{file}: pages[{position}].raster: cannot read {path}: {message}")]
    Raster {
        file: PathBuf,
        position: usize,
        path: PathBuf,
        message: String,
    },
    #[error("{file}: {}", join_violations(.violations))]
    Invalid {
        file: PathBuf,
        violations: Vec<Violation>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    doc_id: String,
    pages: Vec<ManifestPage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPage {
    index: u32,
    raster: String,
    width: u32,
    height: u32,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DocumentError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DocumentError::MissingFile(path.to_path_buf())
        } else {
            DocumentError::Io(e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| DocumentError::Parse {
        file: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads and validates a document directory.
///
/// Anything [`validate_document`] would flag is rejected here, with the
/// offending file and JSON field in the error.
pub fn load_document(dir: impl AsRef<Path>) -> Result<Document, DocumentError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(DocumentError::MissingManifest(manifest_path));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let elements_path = dir.join(ELEMENTS_FILE);
    let raw_elements: Vec<Element> = read_json(&elements_path)?;

    if manifest.pages.is_empty() {
        return Err(DocumentError::Invalid {
            file: manifest_path,
            violations: vec![violation(
                ViolationCode::EmptyDocument,
                None,
                None,
                "pages".into(),
                "document has no pages".into(),
            )],
        });
    }

    let mut order: Vec<usize> = (0..manifest.pages.len()).collect();
    order.sort_by_key(|&i| manifest.pages[i].index);
    let mut expected = 1u32;
    let mut page_violations = Vec::new();
    for &pos in &order {
        let mp = &manifest.pages[pos];
        if mp.index < expected {
            page_violations.push(violation(
                ViolationCode::DuplicatePageIndex,
                None,
                Some(mp.index),
                format!("pages[{pos}].index"),
                format!("duplicate page index {}", mp.index),
            ));
            continue;
        }
        if mp.index > expected {
            if expected == 1 {
                page_violations.push(violation(
                    ViolationCode::PageIndexGap,
                    None,
                    Some(mp.index),
                    format!("pages[{pos}].index"),
                    format!("page indices must start at 1, found {}", mp.index),
                ));
            } else {
                return Err(DocumentError::PageIndexGap {
                    file: manifest_path,
                    after: expected - 1,
                });
            }
        }
        if mp.width == 0 || mp.height == 0 {
            page_violations.push(violation(
                ViolationCode::ZeroPageSize,
                None,
                Some(mp.index),
                format!("pages[{pos}].width/height"),
                format!("page {} has zero size {}x{}", mp.index, mp.width, mp.height),
            ));
        }
        expected = mp.index + 1;
    }
    if !page_violations.is_empty() {
        return Err(DocumentError::Invalid {
            file: manifest_path,
            violations: page_violations,
        });
    }

    for &pos in &order {
        let mp = &manifest.pages[pos];
        let path = dir.join(&mp.raster);
        let (w, h) = image::image_dimensions(&path).map_err(|e| DocumentError::Raster {
            file: manifest_path.clone(),
            position: pos,
            path: path.clone(),
            message: e.to_string(),
        })?;
        if (w, h) != (mp.width, mp.height) {
            return Err(DocumentError::Raster {
                file: manifest_path.clone(),
                position: pos,
                path,
                message: format!(
                    "raster is {w}x{h} but manifest declares {}x{}",
                    mp.width, mp.height
                ),
            });
        }
    }

    let mut pages: Vec<Page> = order
        .iter()
        .map(|&pos| {
            let mp = &manifest.pages[pos];
            Page {
                index: mp.index,
                raster: mp.raster.clone(),
                width: mp.width,
                height: mp.height,
                elements: Vec::new(),
            }
        })
        .collect();

    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let page_count = pages.len();
    for (pos, element) in raw_elements.into_iter().enumerate() {
        let prefix = format!("[{pos}]");
        let dims = page_dims(&pages, element.page_index);
        violations.extend(check_element(&element, page_count, dims, &prefix));
        if !seen.insert(element.element_id.clone()) {
            violations.push(violation(
                ViolationCode::DuplicateElementId,
                Some(element.element_id.clone()),
                Some(element.page_index),
                format!("{prefix}.element_id"),
                format!("duplicate element_id {:?}", element.element_id),
            ));
        }
        if let Some(page) = usize::try_from(element.page_index)
            .ok()
            .and_then(|i| i.checked_sub(1))
            .and_then(|i| pages.get_mut(i))
        {
            page.elements.push(element);
        }
    }
    if !violations.is_empty() {
        return Err(DocumentError::Invalid {
            file: elements_path,
            violations,
        });
    }

    let doc = Document {
        doc_id: manifest.doc_id,
        pages,
        dir: dir.to_path_buf(),
    };
    debug_assert!(validate_document(&doc).is_empty());
    Ok(doc)
}

fn page_dims(pages: &[Page], index: u32) -> Option<(u32, u32)> {
    let i = usize::try_from(index).ok()?.checked_sub(1)?;
    pages.get(i).map(|p| (p.width, p.height))
}

fn violation(
    code: ViolationCode,
    element_id: Option<String>,
    page_index: Option<u32>,
    location: String,
    message: String,
) -> Violation {
    Violation {
        code,
        element_id,
        page_index,
        location,
        message,
    }
}

/// Per-element checks shared by loading and validation. `dims` are the
/// dimensions of the page the element claims to live on, if that page exists.
fn check_element(
    e: &Element,
    page_count: usize,
    dims: Option<(u32, u32)>,
    location: &str,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let id = Some(e.element_id.clone());
    if e.page_index == 0 || e.page_index as usize > page_count {
        out.push(violation(
            ViolationCode::PageIndexOutOfRange,
            id.clone(),
            Some(e.page_index),
            format!("{location}.page_index"),
            format!(
                "element {:?} references page {} of a {}-page document",
                e.element_id, e.page_index, page_count
            ),
        ));
    }
    if e.bbox.is_degenerate() {
        out.push(violation(
            ViolationCode::DegenerateBox,
            id.clone(),
            Some(e.page_index),
            format!("{location}.bbox"),
            format!("element {:?} has degenerate bbox {:?}", e.element_id, <[u32; 4]>::from(e.bbox)),
        ));
    }
    if let Some((w, h)) = dims {
        if !e.bbox.fits_within(w, h) {
            out.push(violation(
                ViolationCode::BoxOutsideRaster,
                id.clone(),
                Some(e.page_index),
                format!("{location}.bbox"),
                format!(
                    "element {:?} bbox {:?} exceeds raster {}x{}",
                    e.element_id,
                    <[u32; 4]>::from(e.bbox),
                    w,
                    h
                ),
            ));
        }
    }
    if e.etype.is_text() && e.verbatim.trim().is_empty() {
        out.push(violation(
            ViolationCode::EmptyTextElement,
            id,
            Some(e.page_index),
            format!("{location}.text"),
            format!("text element {:?} has empty text", e.element_id),
        ));
    }
    out
}

/// Checks every document invariant. An empty result means the document is valid.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.pages.is_empty() {
        out.push(violation(
            ViolationCode::EmptyDocument,
            None,
            None,
            "pages".into(),
            "document has no pages".into(),
        ));
        return out;
    }
    let page_count = doc.pages.len();
    let mut page_seen = HashSet::new();
    for (pos, page) in doc.pages.iter().enumerate() {
        let expected = pos as u32 + 1;
        if !page_seen.insert(page.index) {
            out.push(violation(
                ViolationCode::DuplicatePageIndex,
                None,
                Some(page.index),
                format!("pages[{pos}].index"),
                format!("duplicate page index {}", page.index),
            ));
        } else if page.index != expected {
            out.push(violation(
                ViolationCode::PageIndexGap,
                None,
                Some(page.index),
                format!("pages[{pos}].index"),
                format!("expected page index {expected}, found {}", page.index),
            ));
        }
        if page.width == 0 || page.height == 0 {
            out.push(violation(
                ViolationCode::ZeroPageSize,
                None,
                Some(page.index),
                format!("pages[{pos}].width/height"),
                format!("page {} has zero size", page.index),
            ));
        }
    }

    let mut ids = HashSet::new();
    for page in &doc.pages {
        for e in &page.elements {
            let location = format!("page {} element {:?}", page.index, e.element_id);
            let dims = (e.page_index == page.index).then_some((page.width, page.height));
            out.extend(check_element(e, page_count, dims, &location));
            if e.page_index != page.index && e.page_index >= 1 && e.page_index as usize <= page_count {
                out.push(violation(
                    ViolationCode::ElementPageMismatch,
                    Some(e.element_id.clone()),
                    Some(e.page_index),
                    format!("{location}.page_index"),
                    format!(
                        "element {:?} stored on page {} but claims page {}",
                        e.element_id, page.index, e.page_index
                    ),
                ));
            }
            if !ids.insert(e.element_id.as_str()) {
                out.push(violation(
                    ViolationCode::DuplicateElementId,
                    Some(e.element_id.clone()),
                    Some(e.page_index),
                    format!("{location}.element_id"),
                    format!("duplicate element_id {:?}", e.element_id),
                ));
            }
        }
    }
    out
}

/// Writes `doc` in the canonical layout under `dir`, copying rasters when
/// `dir` differs from the document's current directory. Returns the document
/// rebound to `dir`.
pub fn save_document(doc: &Document, dir: impl AsRef<Path>) -> Result<Document, DocumentError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let same_dir = match (doc.dir.canonicalize(), dir.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if !same_dir {
        for page in &doc.pages {
            let dest = dir.join(&page.raster);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(doc.raster_path(page), dest)?;
        }
    }
    let manifest = Manifest {
        doc_id: doc.doc_id.clone(),
        pages: doc
            .pages
            .iter()
            .map(|p| ManifestPage {
                index: p.index,
                raster: p.raster.clone(),
                width: p.width,
                height: p.height,
            })
            .collect(),
    };
    write_json_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
    let elements: Vec<&Element> = doc.elements().collect();
    write_json_atomic(&dir.join(ELEMENTS_FILE), &elements)?;
    Ok(Document {
        dir: dir.to_path_buf(),
        ..doc.clone()
    })
}

/// Element counts per page, in page order.
pub fn element_counts(doc: &Document) -> Vec<usize> {
    doc.pages.iter().map(|p| p.elements.len()).collect()
}

/// Groups elements by page index, preserving order.
pub fn group_by_page<'a>(elements: impl IntoIterator<Item = &'a Element>) -> BTreeMap<u32, Vec<&'a Element>> {
    let mut out: BTreeMap<u32, Vec<&Element>> = BTreeMap::new();
    for e in elements {
        out.entry(e.page_index).or_default().push(e);
    }
    out
}
