//! Prompt text for the knowledge-construction agents.
//!
//! Every prompt opens with a `Task:` line that names the call precisely
//! (page and element ids included). Scripted backends route on it.

use crate::document::{Element, Page};

use super::{GlobalKnowledge, PageKnowledge};

pub const PROMPT_VERSION: &str = "1";

pub(crate) const GLOBAL_SECTIONS: [&str; 6] = [
    "Title",
    "Objective",
    "Structure Overview",
    "Key Insights",
    "Audience",
    "Tone",
];

pub(crate) const ELEMENT_FIELDS: [&str; 7] = [
    "Element Type",
    "Position on Slide",
    "Verbatim Content",
    "Semantic Role",
    "Functional Purpose",
    "Relation to Slide",
    "Inferred Importance",
];

pub(crate) const GLOBAL_FORMAT: &str = "\
Respond with markdown containing exactly these headed sections:

**Title**
<explicit or inferred title of the deck>

**Objective**
<what the deck sets out to do: inform, persuade, pitch, propose, ...>

**Structure Overview**
- **Slide 1**: <one-line description>
- **Slide 2**: <one-line description>
- ...

**Key Insights**
- <major takeaway>
- ...

**Audience**
<intended audience, e.g. executives, investors, engineers>

**Tone**
<overall tone, e.g. analytical, persuasive, optimistic, urgent>";

pub(crate) fn global_task(sampled: usize, total: usize) -> String {
    format!(
        "Task: global knowledge\n\
         The attached images are the first {sampled} of {total} pages of a slide deck. \
         Produce a concise, high-level account of the deck as a whole: its overall message, \
         how it is organised, and what it is for.\n\n{GLOBAL_FORMAT}"
    )
}

pub(crate) fn page_task(page: &Page, total: usize, global: &GlobalKnowledge, prev: Option<&PageKnowledge>) -> String {
    let mut s = format!(
        "Task: page knowledge for page {} of {}\n\
         The attached image is page {} of the deck.\n\n\
         ## Global knowledge of the deck\n{}\n",
        page.index,
        total,
        page.index,
        global.raw_markdown.trim_end()
    );
    if let Some(prev) = prev {
        s.push_str(&format!(
            "\n## Knowledge of the preceding page ({})\n{}\n",
            prev.page_index,
            prev.raw_text.trim_end()
        ));
    }
    s.push_str(
        "\nDescribe this page. Start with a one-paragraph summary of what it shows, \
         then list its key facts and figures. Refer to related pages as \"page N\".",
    );
    s
}

pub(crate) fn refine_task(draft: &GlobalKnowledge, pages: &[PageKnowledge]) -> String {
    let mut s = format!(
        "Task: refine global knowledge\n\
         Below is a draft description of a {}-page slide deck, written from its first pages only, \
         followed by a summary of every page. Rewrite the description so it reflects the whole \
         deck; the Structure Overview must list every page.\n\n## Draft\n{}\n\n## Page summaries\n",
        pages.len(),
        draft.raw_markdown.trim_end()
    );
    for p in pages {
        s.push_str(&format!("- Page {}: {}\n", p.page_index, p.summary));
    }
    s.push('\n');
    s.push_str(GLOBAL_FORMAT);
    s
}

pub(crate) fn element_task(
    element: &Element,
    page: &Page,
    global: &GlobalKnowledge,
    page_knowledge: Option<&PageKnowledge>,
) -> String {
    let b = element.bbox;
    let mut s = format!(
        "Task: element knowledge for element {} on page {}\n\
         The attached image is page {} with the element outlined and labelled \"{}\".\n\n\
         ## Element\n\
         - Page: {}\n\
         - Type: {}\n\
         - Bounding box: [{}, {}, {}, {}] (pixels, page is {}x{})\n\
         - Verbatim text: {:?}\n\n\
         ## Global knowledge of the deck\n{}\n",
        element.element_id,
        page.index,
        page.index,
        element.element_id,
        element.page_index,
        element.etype,
        b.x1,
        b.y1,
        b.x2,
        b.y2,
        page.width,
        page.height,
        element.verbatim,
        global.raw_markdown.trim_end()
    );
    if let Some(pk) = page_knowledge {
        s.push_str(&format!(
            "\n## Knowledge of page {}\n{}\n",
            pk.page_index,
            pk.raw_text.trim_end()
        ));
    }
    s.push_str(
        "\nDescribe the element using exactly these fields, one per line:\n\
         **Element Type** <text | image | chart | table | icon | button | ...>\n\
         **Position on Slide** <e.g. top-right, centred, below the title>\n\
         **Verbatim Content** <the literal text, or a description of the visual>\n\
         **Semantic Role** <what the element communicates>\n\
         **Functional Purpose** <its job on the slide: emphasise, guide attention, show evidence, ...>\n\
         **Relation to Slide** <how it supports the slide's message>\n\
         **Inferred Importance** <low, medium or high>",
    );
    s
}
