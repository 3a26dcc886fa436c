//! Device-aware payload shaping.
//!
//! A ranked list is cut to the device's list length, then rendered at the
//! richest variant whose canonical serialized size fits the device's byte
//! budget: `Full`, then `Compact` (content cut to an excerpt), then
//! `TextOnly` (no images, no content, titles cut). If even `TextOnly` is too
//! large, trailing items are dropped.

use serde::{Deserialize, Serialize};

use crate::diffusion::Recommendation;
use crate::ids::{DeviceId, RecId};
use crate::profile::DeviceProfile;

pub const COMPACT_EXCERPT_CHARS: usize = 120;
pub const TEXT_ONLY_TITLE_CHARS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Compact,
    TextOnly,
}

impl Variant {
    fn degrade(self) -> Option<Variant> {
        match self {
            Variant::Full => Some(Variant::Compact),
            Variant::Compact => Some(Variant::TextOnly),
            Variant::TextOnly => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptedItem {
    pub rec_id: RecId,
    pub title: String,
    pub content_excerpt: String,
    pub image_included: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptedPayload {
    pub items: Vec<AdaptedItem>,
    pub variant: Variant,
    pub device_id: DeviceId,
}

impl AdaptedPayload {
    /// Size of the canonical serialized form, in bytes.
    pub fn serialized_len(&self) -> usize {
        serde_json::to_vec(self).map(|v| v.len()).unwrap_or(usize::MAX)
    }

    /// Adapt this payload's own items again for `d`, starting at the
    /// current variant.
    pub fn readapt(&self, d: &DeviceProfile, opts: &AdaptOptions) -> AdaptedPayload {
        adapt_from(&self.items, d, opts, self.variant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptOptions {
    pub excerpt_chars: usize,
    pub title_chars: usize,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            excerpt_chars: COMPACT_EXCERPT_CHARS,
            title_chars: TEXT_ONLY_TITLE_CHARS,
        }
    }
}

/// Anything that can be rendered as a payload item.
pub trait PayloadSource {
    fn rec_id(&self) -> &RecId;
    fn title(&self) -> &str;
    fn content(&self) -> &str;
    fn has_image(&self) -> bool;
}

impl PayloadSource for Recommendation {
    fn rec_id(&self) -> &RecId {
        &self.rec_id
    }
    fn title(&self) -> &str {
        &self.title
    }
    fn content(&self) -> &str {
        &self.content
    }
    // every recommendation type carries artwork
    fn has_image(&self) -> bool {
        true
    }
}

impl PayloadSource for AdaptedItem {
    fn rec_id(&self) -> &RecId {
        &self.rec_id
    }
    fn title(&self) -> &str {
        &self.title
    }
    fn content(&self) -> &str {
        &self.content_excerpt
    }
    fn has_image(&self) -> bool {
        self.image_included
    }
}

/// At most `max` characters; longer text keeps `max - 1` characters and an
/// ellipsis, so excerpting an excerpt is a no-op.
pub fn excerpt(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_owned();
    }
    if max == 0 {
        return String::new();
    }
    let mut out: String = text.chars().take(max - 1).collect();
    out.push('…');
    out
}

fn render<S: PayloadSource>(src: &S, variant: Variant, d: &DeviceProfile, opts: &AdaptOptions) -> AdaptedItem {
    let image = d.image_support && src.has_image() && variant != Variant::TextOnly;
    let (title, content_excerpt) = match variant {
        Variant::Full => (src.title().to_owned(), src.content().to_owned()),
        Variant::Compact => (src.title().to_owned(), excerpt(src.content(), opts.excerpt_chars)),
        Variant::TextOnly => (excerpt(src.title(), opts.title_chars), String::new()),
    };
    AdaptedItem {
        rec_id: src.rec_id().clone(),
        title,
        content_excerpt,
        image_included: image,
    }
}

fn json_len<T: Serialize>(value: &T) -> usize {
    serde_json::to_vec(value).map(|v| v.len()).unwrap_or(usize::MAX)
}

pub fn adapt_payload<S: PayloadSource>(recs: &[S], d: &DeviceProfile) -> AdaptedPayload {
    adapt_from(recs, d, &AdaptOptions::default(), Variant::Full)
}

pub fn adapt_payload_with<S: PayloadSource>(
    recs: &[S],
    d: &DeviceProfile,
    opts: &AdaptOptions,
) -> AdaptedPayload {
    adapt_from(recs, d, opts, Variant::Full)
}

fn adapt_from<S: PayloadSource>(
    recs: &[S],
    d: &DeviceProfile,
    opts: &AdaptOptions,
    start: Variant,
) -> AdaptedPayload {
    let cap = d.max_payload_bytes as usize;
    let keep = recs.len().min(d.max_list_items as usize);
    let recs = &recs[..keep];

    let mut variant = start;
    loop {
        let items: Vec<AdaptedItem> = recs.iter().map(|r| render(r, variant, d, opts)).collect();
        let mut payload = AdaptedPayload {
            items: Vec::new(),
            variant,
            device_id: d.device_id.clone(),
        };
        // The compact JSON form is the empty payload plus each item and a
        // comma between items.
        let empty = json_len(&payload);
        let sizes: Vec<usize> = items.iter().map(json_len).collect();
        let total = empty + sizes.iter().sum::<usize>() + sizes.len().saturating_sub(1);
        if total <= cap {
            payload.items = items;
            return payload;
        }
        match variant.degrade() {
            Some(next) => variant = next,
            None => {
                let mut used = empty;
                let mut fitted = Vec::new();
                for (item, size) in items.into_iter().zip(sizes) {
                    let extra = size + usize::from(!fitted.is_empty());
                    if used + extra > cap {
                        break;
                    }
                    used += extra;
                    fitted.push(item);
                }
                payload.items = fitted;
                return payload;
            }
        }
    }
}
