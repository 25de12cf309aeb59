use crate::types::SharedFileRecord;
use crate::wire::napster::SearchQuery;

/// One shared file as the index sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry<'a> {
    pub nick: &'a str,
    pub link_type: u8,
    pub file: &'a SharedFileRecord,
}

/// Filename-only search. Every artist and title token must occur in the
/// filename, case-insensitively; tags such as bitrate only act as range
/// filters. A query with no name tokens matches nothing.
pub fn match_search<'a, I>(q: &SearchQuery, index: I) -> Vec<IndexEntry<'a>>
where
    I: IntoIterator<Item = IndexEntry<'a>>,
{
    let tokens: Vec<String> = q
        .artist
        .iter()
        .chain(q.title.iter())
        .flat_map(|s| s.split_whitespace())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Vec::new();
    }
    index
        .into_iter()
        .filter(|e| {
            let name = e.file.filename.to_lowercase();
            tokens.iter().all(|t| name.contains(t.as_str()))
        })
        .filter(|e| q.bitrate_range.is_none_or(|r| r.contains(e.file.bitrate_kbps)))
        .filter(|e| q.frequency_range.is_none_or(|r| r.contains(e.file.frequency_hz)))
        .filter(|e| q.link_type_range.is_none_or(|r| r.contains(e.link_type.into())))
        .take(q.max_results as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::napster::Range;

    fn entries(files: &[SharedFileRecord]) -> Vec<IndexEntry<'_>> {
        files
            .iter()
            .map(|f| IndexEntry {
                nick: "bob",
                link_type: 8,
                file: f,
            })
            .collect()
    }

    #[test]
    fn matches_on_filename_only() {
        let files = [SharedFileRecord::synthetic("Metallica - One.mp3", 10)];
        let q = SearchQuery::by_name(Some("one"), None, 10);
        assert_eq!(match_search(&q, entries(&files)).len(), 1);

        // Metadata that would name the artist is not consulted.
        let files = [SharedFileRecord::synthetic("track01.mp3", 10)];
        let q = SearchQuery::by_name(Some("metallica"), None, 10);
        assert!(match_search(&q, entries(&files)).is_empty());
    }

    #[test]
    fn caps_and_filters() {
        let files: Vec<_> = (0..3)
            .map(|i| SharedFileRecord::synthetic(format!("song {i}.mp3"), 10))
            .collect();
        let q = SearchQuery::by_name(Some("song"), None, 1);
        assert_eq!(match_search(&q, entries(&files)).len(), 1);

        let mut q = SearchQuery::by_name(Some("song"), Some("2"), 10);
        assert_eq!(match_search(&q, entries(&files)).len(), 1);
        q.link_type_range = Some(Range { min: 9, max: 10 });
        assert!(match_search(&q, entries(&files)).is_empty());
        q.link_type_range = None;
        q.bitrate_range = Some(Range { min: 0, max: 1 });
        assert!(match_search(&q, entries(&files)).is_empty());
    }

    #[test]
    fn empty_query_matches_nothing() {
        let files = [SharedFileRecord::synthetic("a.mp3", 1)];
        let q = SearchQuery::by_name(None, None, 10);
        assert!(match_search(&q, entries(&files)).is_empty());
    }
}
