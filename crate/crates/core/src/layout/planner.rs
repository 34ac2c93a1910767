use super::{BoundingBox, LayoutError, LayoutObject, LayoutPlan, LayoutProvider};

const LAYOUT_SYSTEM_TEMPLATE: &str = include_str!("../../data/layout_system_prompt.txt");
pub(crate) const BACKGROUND_SYSTEM_PROMPT: &str = include_str!("../../data/background_system_prompt.txt");

pub fn layout_system_prompt(canvas: u32) -> String {
    LAYOUT_SYSTEM_TEMPLATE.replace("{W}", &canvas.to_string())
}

pub fn background_system_prompt() -> &'static str {
    BACKGROUND_SYSTEM_PROMPT
}

pub fn user_prompt(description: &str) -> String {
    format!("Description: {description}")
}

pub(crate) fn strip_user_prompt(user: &str) -> &str {
    user.strip_prefix("Description: ").unwrap_or(user)
}

pub(crate) fn parse_canvas_from_system(system: &str) -> Option<u32> {
    let rest = system.strip_prefix("You have a canvas of size ")?;
    let end = rest.find('x')?;
    rest[..end].parse().ok()
}

/// Extracts the JSON array from a reply that may open with free-text
/// justification, then clamps every box onto the canvas.
pub fn parse_layout_response(reply: &str, canvas: u32) -> Result<Vec<LayoutObject>, LayoutError> {
    let start = reply.find('[').ok_or_else(|| LayoutError::MalformedLlmResponse("no JSON array".into()))?;
    let end = reply
        .rfind(']')
        .filter(|&e| e > start)
        .ok_or_else(|| LayoutError::MalformedLlmResponse("unterminated JSON array".into()))?;
    let entries: Vec<serde_json::Value> =
        serde_json::from_str(&reply[start..=end]).map_err(|e| LayoutError::MalformedLlmResponse(e.to_string()))?;
    entries
        .iter()
        .map(|entry| {
            let prompt = entry["prompt"]
                .as_str()
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| LayoutError::MalformedLlmResponse(format!("entry without prompt: {entry}")))?;
            let coord = |key: &str| -> Result<i64, LayoutError> {
                entry[key]
                    .as_f64()
                    .map(|v| v.round() as i64)
                    .ok_or_else(|| LayoutError::MalformedLlmResponse(format!("entry without {key}: {entry}")))
            };
            let bbox = BoundingBox::clamped(coord("x_min")?, coord("y_min")?, coord("x_max")?, coord("y_max")?, canvas);
            Ok(LayoutObject { sub_prompt: prompt.to_string(), bbox })
        })
        .collect()
}

fn first_word(reply: &str) -> Option<String> {
    reply
        .split_whitespace()
        .next()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
}

/// Asks the provider for object boxes and a one-word background.
///
/// A reply that cannot be parsed is requested once more before giving up.
pub fn plan_layout(prompt: &str, canvas: u32, provider: &dyn LayoutProvider) -> Result<LayoutPlan, LayoutError> {
    if canvas < 2 {
        return Err(LayoutError::CanvasTooSmall(canvas));
    }
    let system = layout_system_prompt(canvas);
    let user = user_prompt(prompt);
    let objects = match parse_layout_response(&provider.complete(&system, &user)?, canvas) {
        Ok(objects) => objects,
        Err(LayoutError::MalformedLlmResponse(_)) => {
            parse_layout_response(&provider.complete(&system, &user)?, canvas)?
        }
        Err(e) => return Err(e),
    };
    if objects.is_empty() {
        return Err(LayoutError::EmptyLayout);
    }
    let background_reply = provider.complete(BACKGROUND_SYSTEM_PROMPT, &user)?;
    let plan = LayoutPlan {
        full_prompt: prompt.to_string(),
        background_prompt: first_word(&background_reply).unwrap_or_else(|| "background".to_string()),
        objects,
        canvas_size: canvas,
    };
    plan.validate()?;
    Ok(plan)
}
