//! The fixed beneficiary feature schema.
//!
//! Integer registration fields are bucketed to one binary flag each before
//! they are exposed to reward expressions, so every feature is a bit.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Registration,
    Age,
    Language,
    Education,
    PhoneOwner,
    CallSlot,
    Channel,
    Income,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Registration,
        Category::Age,
        Category::Language,
        Category::Education,
        Category::PhoneOwner,
        Category::CallSlot,
        Category::Channel,
        Category::Income,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Registration => "Registration",
            Category::Age => "Age",
            Category::Language => "Language",
            Category::Education => "Education",
            Category::PhoneOwner => "Phone owner",
            Category::CallSlot => "Call slot",
            Category::Channel => "Channel",
            Category::Income => "Income",
        }
    }

    /// Whether a beneficiary carries exactly one flag of this category.
    pub fn is_exclusive(self) -> bool {
        !matches!(self, Category::Registration | Category::Language)
    }
}

pub struct FeatureDef {
    pub name: &'static str,
    pub description: &'static str,
    pub category: Category,
}

const fn def(name: &'static str, description: &'static str, category: Category) -> FeatureDef {
    FeatureDef {
        name,
        description,
        category,
    }
}

use Category::*;

pub static SCHEMA: [FeatureDef; 42] = [
    def("gestational_age_high", "Enrollment gestational age above median", Registration),
    def("delivery_status_delivered", "Enrolled after delivery", Registration),
    def("gravidity_high", "Gravidity above median", Registration),
    def("parity_high", "Parity above median", Registration),
    def("live_births_high", "Live births above median", Registration),
    def("days_to_first_call_high", "Days to the first call above median", Registration),
    def("youngest_age", "Ages 10-20", Age),
    def("second_youngest_age", "Ages 21-30", Age),
    def("middle_age", "Ages 31-40", Age),
    def("second_oldest_age", "Ages 41-50", Age),
    def("oldest_age", "Ages 51-60", Age),
    def("speaks_hindi", "Speaks Hindi", Language),
    def("speaks_marathi", "Speaks Marathi", Language),
    def("speaks_gujurati", "Speaks Gujurati", Language),
    def("speaks_kannada", "Speaks Kannada", Language),
    def("lowest_education", "Illiterate", Education),
    def("second_lowest_education", "1-5th Grade Completed", Education),
    def("third_lowest_education", "6-9th Grade Completed", Education),
    def("middle_education", "10th Grade Passed", Education),
    def("third_highest_education", "12th Grade Passed", Education),
    def("second_highest_education", "Graduate", Education),
    def("highest_education", "Post graduate", Education),
    def("phone_owner_woman", "Phone owner 0 (woman)", PhoneOwner),
    def("phone_owner_husband", "Phone owner 1 (husband)", PhoneOwner),
    def("phone_owner_family", "Phone owner 2 (family)", PhoneOwner),
    def("8_30-10_30am", "To be called from 8:30am-10:30am", CallSlot),
    def("10_30-12_30pm", "To be called from 10:30am-12:30pm", CallSlot),
    def("12_30-3pm", "To be called from 12:30pm-3:30pm", CallSlot),
    def("3_30-5_30pm", "To be called from 3:30pm-5:30pm", CallSlot),
    def("5_30-7_30pm", "To be called from 5:30pm-7:30pm", CallSlot),
    def("7_30-9_30pm", "To be called from 7:30pm-9:30pm", CallSlot),
    def("NGO_registered", "Registered through an NGO", Channel),
    def("ARMMAN_registered", "Registered through ARMMAN", Channel),
    def("PHC_registered", "Registered through a PHC", Channel),
    def("no_income", "Income bracket -1 (no income)", Income),
    def("lowest_income", "Income bracket 1 (0-5000)", Income),
    def("second_lowest_income", "Income bracket 2 (5001-10000)", Income),
    def("third_lowest_income", "Income bracket 3 (10001-15000)", Income),
    def("middle_income", "Income bracket 4 (15001-20000)", Income),
    def("third_highest_income", "Income bracket 5 (20001-25000)", Income),
    def("second_highest_income", "Income bracket 6 (25001-30000)", Income),
    def("highest_income", "Income bracket 7 (30000-999999)", Income),
];

pub const FEATURE_COUNT: usize = SCHEMA.len();

/// Index of a feature in [`SCHEMA`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureId(pub(crate) u8);

impl FeatureId {
    pub fn from_index(i: usize) -> Option<Self> {
        (i < FEATURE_COUNT).then_some(FeatureId(i as u8))
    }

    pub fn by_name(name: &str) -> Option<Self> {
        SCHEMA.iter().position(|d| d.name == name).map(|i| FeatureId(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn def(self) -> &'static FeatureDef {
        &SCHEMA[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.def().name
    }

    pub fn category(self) -> Category {
        self.def().category
    }

    pub fn all() -> impl Iterator<Item = FeatureId> {
        (0..FEATURE_COUNT).map(|i| FeatureId(i as u8))
    }

    pub fn in_category(category: Category) -> impl Iterator<Item = FeatureId> {
        Self::all().filter(move |f| f.category() == category)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A binary feature vector over [`SCHEMA`], stored as a bitmask.
///
/// Serialized as the list of active feature names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet(u64);

impl FeatureSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut set = Self::empty();
        for name in names {
            let id = FeatureId::by_name(name)
                .ok_or_else(|| Error::invalid(format!("unknown feature {name:?}")))?;
            set.insert(id);
        }
        Ok(set)
    }

    pub fn contains(self, id: FeatureId) -> bool {
        self.0 >> id.0 & 1 == 1
    }

    pub fn get(self, id: FeatureId) -> u8 {
        self.contains(id) as u8
    }

    pub fn insert(&mut self, id: FeatureId) {
        self.0 |= 1 << id.0;
    }

    pub fn remove(&mut self, id: FeatureId) {
        self.0 &= !(1 << id.0);
    }

    pub fn toggled(mut self, id: FeatureId) -> Self {
        self.0 ^= 1 << id.0;
        self
    }

    pub fn iter(self) -> impl Iterator<Item = FeatureId> {
        FeatureId::all().filter(move |&f| self.contains(f))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u64 {
        self.0
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter().map(FeatureId::name))
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        FeatureSet::from_names(names.iter().map(String::as_str)).map_err(serde::de::Error::custom)
    }
}
