//! The four-category, four-level rubric reviewers grade comments on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Hallucination,
    Readability,
    Completeness,
    Usefulness,
}

impl Category {
    /// Rubric order.
    pub const ALL: [Category; 4] = [
        Category::Hallucination,
        Category::Readability,
        Category::Completeness,
        Category::Usefulness,
    ];

    /// Column order of the correlation tables.
    pub const TABLE_ORDER: [Category; 4] = [
        Category::Hallucination,
        Category::Completeness,
        Category::Readability,
        Category::Usefulness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Hallucination => "hallucination",
            Category::Readability => "readability",
            Category::Completeness => "completeness",
            Category::Usefulness => "usefulness",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::Hallucination => "Hallucination",
            Category::Readability => "Readability",
            Category::Completeness => "Completeness",
            Category::Usefulness => "Usefulness",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown rubric category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RubricLevel {
    pub level: u8,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RubricCategory {
    pub name: Category,
    pub title: &'static str,
    pub question: &'static str,
    /// Highest level first.
    pub levels: [RubricLevel; 4],
}

const fn level(level: u8, description: &'static str) -> RubricLevel {
    RubricLevel { level, description }
}

pub fn rubric() -> [RubricCategory; 4] {
    [
        RubricCategory {
            name: Category::Hallucination,
            title: "Hallucination",
            question: "Does the comment provide true information?",
            levels: [
                level(4, "The comment provides only true information"),
                level(3, "The comment provides mostly true information"),
                level(2, "The comment provides mostly untrue information"),
                level(1, "The comment is completely untrue"),
            ],
        },
        RubricCategory {
            name: Category::Readability,
            title: "Readability",
            question: "Is the comment clear to read?",
            levels: [
                level(4, "The comment is well-written"),
                level(3, "The comment has few problems"),
                level(2, "The comment has many problems"),
                level(1, "The comment is unreadable"),
            ],
        },
        RubricCategory {
            name: Category::Completeness,
            title: "Completeness",
            question: "Does the comment address all capabilities of the relevant source code?",
            levels: [
                level(4, "All essential functionality is documented"),
                level(3, "Most essential functionality is documented"),
                level(2, "Little essential functionality is documented"),
                level(1, "No essential functionality is documented"),
            ],
        },
        RubricCategory {
            name: Category::Usefulness,
            title: "Usefulness",
            question: "Is the comment useful?",
            levels: [
                level(
                    4,
                    "The comment helps an expert programmer understand the code better",
                ),
                level(
                    3,
                    "The comment helps an average programmer understand the code better",
                ),
                level(2, "The comment documents only trivial functionality"),
                level(1, "The comment is not useful at any level"),
            ],
        },
    ]
}
