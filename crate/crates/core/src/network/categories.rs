//! Macro-categories of the 2-digit HS sectors, used to colour exported
//! networks and embeddings.

pub const UNCLASSIFIED: &str = "Unclassified";

const TABLE: &[(&str, &[u8])] = &[
    ("Agrifood", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24]),
    ("Minerals", &[25, 26, 27, 68, 69, 70, 71]),
    ("Chemicals", &[28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40]),
    ("Hides and wood", &[41, 42, 43, 44, 45, 46, 47, 48, 49]),
    ("Textiles", &[50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63]),
    // 82 is tools of base metals; the source table lists it as a second 83
    ("Metals", &[72, 73, 74, 75, 76, 78, 79, 80, 81, 82, 83]),
    ("Machinery", &[84, 85]),
    ("Vehicles", &[86, 87, 88, 89]),
    ("Instruments", &[90, 91, 92]),
    ("Miscellanea", &[64, 65, 66, 67, 93, 94, 95, 96, 97, 99]),
];

pub fn category_names() -> impl Iterator<Item = &'static str> {
    TABLE.iter().map(|(name, _)| *name)
}

/// Category of a product code by its first two digits; codes outside the
/// table (77, 98, malformed) are `Unclassified`.
pub fn macro_category(code: &str) -> &'static str {
    let Some(chapter) = code.get(..2).and_then(|c| c.parse::<u8>().ok()) else {
        return UNCLASSIFIED;
    };
    TABLE
        .iter()
        .find(|(_, chapters)| chapters.contains(&chapter))
        .map_or(UNCLASSIFIED, |(name, _)| *name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(macro_category("01"), "Agrifood");
        assert_eq!(macro_category("880240"), "Vehicles");
        assert_eq!(macro_category("82"), "Metals");
        assert_eq!(macro_category("77"), UNCLASSIFIED);
        assert_eq!(macro_category("98"), UNCLASSIFIED);
        assert_eq!(macro_category("x1"), UNCLASSIFIED);
        assert_eq!(macro_category("7"), UNCLASSIFIED);
    }

    #[test]
    fn chapters_are_listed_once() {
        let mut all: Vec<u8> = TABLE.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        assert_eq!(all.len(), n);
        // every chapter 01..=99 except the two reserved ones
        assert_eq!(n, 97);
        assert!(!all.contains(&77) && !all.contains(&98));
        assert_eq!(category_names().count(), 10);
    }
}
