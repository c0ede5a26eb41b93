use crate::corpus::{Instance, LabelSpace};

/// Renders the classification prompt sent to every annotator.
pub fn build_prompt(instance: &Instance, label_space: &LabelSpace) -> String {
    let labels = label_space.names().join(", ");
    format!(
        "Classify the given question based on the following categories: {labels}\n\
         Task: Determine the most appropriate category for the question. \
         Your response should be only one of these labels: {labels}, \
         with no additional text or explanation.\n\
         Question: {article}\n\
         Output:",
        article = instance.text
    )
}

/// Maps a raw completion to a class index. Matching is exact after trimming
/// whitespace and ignoring case; anything else is `None` (an invalid output).
pub fn decode_label(raw: &str, label_space: &LabelSpace) -> Option<usize> {
    let answer = raw.trim();
    if answer.is_empty() {
        return None;
    }
    label_space
        .names()
        .iter()
        .position(|name| name.trim().eq_ignore_ascii_case(answer))
}
