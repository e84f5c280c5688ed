#include "sepsisfl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sepsisfl/common.hpp"

namespace sepsisfl::synthdata {

using numcore::Rng;
using numcore::Tensor;

namespace {

// Channel order: HR, MAP, Temp, RR, Lactate, WBC, Creatinine.
const std::vector<std::string> kChannels = {
    "heart_rate", "mean_arterial_pressure", "temperature", "respiratory_rate",
    "lactate",    "white_cell_count",       "creatinine"};
const std::vector<double> kBaseline = {80.0, 85.0, 37.0, 16.0, 1.5, 8.0, 1.0};
const std::vector<double> kSd = {10.0, 10.0, 0.5, 3.0, 0.5, 2.0, 0.3};

// Deterioration trend added over the last 12 hours, scaled by severity.
constexpr double kTrendStart = 36.0;
const std::vector<double> kTrendMag = {30.0, -28.0, 1.5, 8.0, 3.0, 6.0, 0.8};

// Risk rule weights.
constexpr double kSevWeight = 0.55;
constexpr double kLoadWeight = 0.35;
constexpr double kNoiseWeight = 0.10;
constexpr double kLoadSat = 0.5;

// Patient-level variation.
constexpr double kOffsetSd = 0.5;   // baseline offset, in channel-sd units
constexpr double kWanderSd = 0.4;   // OU wander, in channel-sd units
constexpr double kWanderTau = 8.0;  // OU time constant, hours
constexpr double kMeanGap = 2.2;    // mean inter-observation gap, hours

struct ComorbiditySpec {
    const char* name;
    double weight;      // contribution to the risk rule
    double prevalence;  // assignment probability
    double bump[7];     // baseline shift per channel
};

const ComorbiditySpec kComorbidities[] = {
    {"immunosuppression", 0.30, 0.08, {0, 0, 0.2, 0, 0.1, -1.5, 0}},
    {"metastatic_cancer", 0.25, 0.07, {2, 0, 0.1, 0, 0.2, 1.0, 0}},
    {"cirrhosis", 0.22, 0.08, {0, -3, 0, 0, 0.5, 0, 0.1}},
    {"chronic_kidney_disease", 0.20, 0.10, {0, 2, 0, 0, 0.2, 0, 0.6}},
    {"diabetes_mellitus", 0.18, 0.14, {0, 2, 0, 0, 0.1, 0.5, 0.15}},
    {"heart_failure", 0.15, 0.12, {6, -4, 0, 1, 0.2, 0, 0.1}},
    {"copd", 0.12, 0.10, {3, 0, 0, 3, 0.1, 0.5, 0}},
    {"recent_surgery", 0.10, 0.10, {5, 0, 0.3, 1, 0.2, 1.0, 0}},
    {"indwelling_catheter", 0.08, 0.09, {1, 0, 0.2, 0, 0, 0.5, 0}},
    {"pressure_ulcer", 0.05, 0.07, {0, 0, 0.1, 0, 0, 0.5, 0}},
    {"hypertension", 0.02, 0.18, {2, 8, 0, 0, 0, 0, 0.05}},
    {"asthma", 0.01, 0.08, {2, 0, 0, 2, 0, 0, 0}},
};

const char* kDistractors[] = {
    "pneumonia",     "urinary_tract_infection", "cellulitis",         "pancreatitis",
    "gi_bleed",      "stroke",                  "myocardial_infarction",
    "pulmonary_embolism", "delirium",           "anemia"};
constexpr double kDistractorPrevalence = 0.06;

struct FindingSpec {
    const char* name;
    int channel;
    bool high;  // true: value above threshold triggers; false: below
    double threshold;
};

const FindingSpec kFindings[] = {
    {"tachycardia", 0, true, 100.0},
    {"hypotension", 1, false, 65.0},
    {"fever", 2, true, 38.0},
    {"hypothermia", 2, false, 36.0},
    {"tachypnea", 3, true, 22.0},
    {"hyperlactatemia", 4, true, 2.5},
    {"leukocytosis", 5, true, 12.0},
    {"leukopenia", 5, false, 4.0},
    {"elevated_creatinine", 6, true, 1.4},
};

const char* kLabs[] = {"lactate_assay",       "cbc_panel",  "metabolic_panel",
                       "blood_culture",       "urinalysis", "crp_assay",
                       "procalcitonin_assay"};

const char* kDrugs[] = {"broad_spectrum_antibiotics",
                        "vancomycin",
                        "norepinephrine",
                        "vasopressin",
                        "crystalloid_fluids",
                        "corticosteroids",
                        "insulin",
                        "furosemide",
                        "beta_blockers",
                        "heparin",
                        "bronchodilators",
                        "acetaminophen"};

const char* kSymptoms[] = {"confusion", "oliguria", "mottled_skin", "rigors", "dyspnea",
                           "malaise",   "nausea",   "edema",        "chest_pain"};

int comorbidity_count() { return static_cast<int>(std::size(kComorbidities)); }
int distractor_count() { return static_cast<int>(std::size(kDistractors)); }
int finding_count() { return static_cast<int>(std::size(kFindings)); }

void fmt_g(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        f.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return f;
}

}  // namespace

const std::vector<std::string>& channel_names() { return kChannels; }
const std::vector<double>& channel_baseline() { return kBaseline; }
const std::vector<double>& channel_sd() { return kSd; }

void CohortConfig::validate() const {
    if (n_patients < 1) throw ConfigError("cohort: n_patients must be >= 1");
    if (prevalence <= 0.0 || prevalence >= 1.0)
        throw ConfigError("cohort: prevalence must lie in (0, 1)");
    if (feature_count != static_cast<int>(kChannels.size()))
        throw ConfigError("cohort: the clinical panel is fixed at 7 channels");
    if (missingness < 0.0 || missingness >= 1.0)
        throw ConfigError("cohort: missingness must lie in [0, 1)");
    if (irregularity <= 0.0) throw ConfigError("cohort: irregularity must be positive");
}

void PartitionSpec::validate() const {
    if (nodes < 1) throw ConfigError("partition: nodes must be >= 1");
    if (alpha_dir <= 0.0) throw ConfigError("partition: alpha_dir must be positive");
    if (shift_offset < 0.0 || shift_scale < 0.0)
        throw ConfigError("partition: shift magnitudes must be nonnegative");
}

double risk_score(const LatentRecord& l) {
    double load = std::min(1.0, l.comorbidity_load / kLoadSat);
    return kSevWeight * l.severity + kLoadWeight * load + kNoiseWeight * l.noise;
}

Ontology build_ontology(kgraph::KgStore& store) {
    if (store.entity_count() != 0)
        throw InputError("build_ontology: store already populated");

    Ontology ont;
    ont.sepsis = store.add_entity("sepsis");
    for (const auto& f : kFindings) ont.findings.push_back(store.add_entity(f.name));
    for (const auto& c : kComorbidities) {
        ont.comorbidities.push_back(store.add_entity(c.name));
        ont.comorbidity_weight.push_back(c.weight);
    }
    for (const char* d : kDistractors) ont.distractors.push_back(store.add_entity(d));
    for (const char* l : kLabs) store.add_entity(l);
    for (const char* d : kDrugs) store.add_entity(d);
    for (const char* s : kSymptoms) store.add_entity(s);

    store.add_relation("indicates");
    store.add_relation("has_symptom");
    store.add_relation("elevates_lab");
    store.add_relation("comorbid_with");
    store.add_relation("treated_by");

    auto t = [&store](const char* h, const char* r, const char* tl) {
        store.add_triple(h, r, tl);
    };

    for (const auto& f : kFindings) t(f.name, "indicates", "sepsis");
    for (const char* s : kSymptoms) t("sepsis", "has_symptom", s);
    for (const char* s : {"confusion", "oliguria", "mottled_skin", "rigors"})
        t(s, "indicates", "sepsis");

    t("immunosuppression", "has_symptom", "malaise");
    t("immunosuppression", "has_symptom", "rigors");
    t("metastatic_cancer", "has_symptom", "malaise");
    t("metastatic_cancer", "has_symptom", "nausea");
    t("cirrhosis", "has_symptom", "confusion");
    t("cirrhosis", "has_symptom", "edema");
    t("chronic_kidney_disease", "has_symptom", "oliguria");
    t("chronic_kidney_disease", "has_symptom", "edema");
    t("diabetes_mellitus", "has_symptom", "malaise");
    t("diabetes_mellitus", "has_symptom", "confusion");
    t("heart_failure", "has_symptom", "dyspnea");
    t("heart_failure", "has_symptom", "edema");
    t("copd", "has_symptom", "dyspnea");
    t("copd", "has_symptom", "malaise");
    t("recent_surgery", "has_symptom", "nausea");
    t("recent_surgery", "has_symptom", "malaise");
    t("indwelling_catheter", "has_symptom", "rigors");
    t("pressure_ulcer", "has_symptom", "malaise");
    t("hypertension", "has_symptom", "chest_pain");
    t("asthma", "has_symptom", "dyspnea");
    t("pneumonia", "has_symptom", "dyspnea");
    t("pneumonia", "has_symptom", "rigors");
    t("urinary_tract_infection", "has_symptom", "oliguria");
    t("urinary_tract_infection", "has_symptom", "confusion");
    t("cellulitis", "has_symptom", "malaise");
    t("pancreatitis", "has_symptom", "nausea");
    t("gi_bleed", "has_symptom", "malaise");
    t("stroke", "has_symptom", "confusion");
    t("myocardial_infarction", "has_symptom", "chest_pain");
    t("myocardial_infarction", "has_symptom", "dyspnea");
    t("pulmonary_embolism", "has_symptom", "dyspnea");
    t("pulmonary_embolism", "has_symptom", "chest_pain");
    t("delirium", "has_symptom", "confusion");
    t("anemia", "has_symptom", "malaise");

    t("diabetes_mellitus", "comorbid_with", "hypertension");
    t("diabetes_mellitus", "comorbid_with", "chronic_kidney_disease");
    t("diabetes_mellitus", "comorbid_with", "heart_failure");
    t("chronic_kidney_disease", "comorbid_with", "hypertension");
    t("heart_failure", "comorbid_with", "hypertension");
    t("heart_failure", "comorbid_with", "chronic_kidney_disease");
    t("copd", "comorbid_with", "asthma");
    t("cirrhosis", "comorbid_with", "gi_bleed");
    t("metastatic_cancer", "comorbid_with", "immunosuppression");
    t("recent_surgery", "comorbid_with", "indwelling_catheter");
    t("pressure_ulcer", "comorbid_with", "diabetes_mellitus");
    t("stroke", "comorbid_with", "hypertension");
    t("myocardial_infarction", "comorbid_with", "hypertension");
    t("myocardial_infarction", "comorbid_with", "heart_failure");
    t("pulmonary_embolism", "comorbid_with", "recent_surgery");
    t("anemia", "comorbid_with", "gi_bleed");
    t("delirium", "comorbid_with", "stroke");

    t("sepsis", "elevates_lab", "lactate_assay");
    t("sepsis", "elevates_lab", "cbc_panel");
    t("sepsis", "elevates_lab", "procalcitonin_assay");
    t("sepsis", "elevates_lab", "crp_assay");
    t("hyperlactatemia", "elevates_lab", "lactate_assay");
    t("leukocytosis", "elevates_lab", "cbc_panel");
    t("leukopenia", "elevates_lab", "cbc_panel");
    t("elevated_creatinine", "elevates_lab", "metabolic_panel");
    t("fever", "elevates_lab", "blood_culture");
    t("chronic_kidney_disease", "elevates_lab", "metabolic_panel");
    t("cirrhosis", "elevates_lab", "lactate_assay");
    t("diabetes_mellitus", "elevates_lab", "metabolic_panel");
    t("metastatic_cancer", "elevates_lab", "crp_assay");
    t("immunosuppression", "elevates_lab", "cbc_panel");
    t("heart_failure", "elevates_lab", "metabolic_panel");
    t("recent_surgery", "elevates_lab", "crp_assay");
    t("pneumonia", "elevates_lab", "crp_assay");
    t("urinary_tract_infection", "elevates_lab", "urinalysis");
    t("cellulitis", "elevates_lab", "blood_culture");
    t("pancreatitis", "elevates_lab", "metabolic_panel");
    t("gi_bleed", "elevates_lab", "cbc_panel");
    t("myocardial_infarction", "elevates_lab", "metabolic_panel");
    t("anemia", "elevates_lab", "cbc_panel");

    t("sepsis", "treated_by", "broad_spectrum_antibiotics");
    t("sepsis", "treated_by", "norepinephrine");
    t("sepsis", "treated_by", "crystalloid_fluids");
    t("sepsis", "treated_by", "vasopressin");
    t("sepsis", "treated_by", "corticosteroids");
    t("hypotension", "treated_by", "norepinephrine");
    t("hypotension", "treated_by", "crystalloid_fluids");
    t("fever", "treated_by", "acetaminophen");
    t("tachycardia", "treated_by", "beta_blockers");
    t("pneumonia", "treated_by", "broad_spectrum_antibiotics");
    t("urinary_tract_infection", "treated_by", "broad_spectrum_antibiotics");
    t("cellulitis", "treated_by", "vancomycin");
    t("diabetes_mellitus", "treated_by", "insulin");
    t("heart_failure", "treated_by", "furosemide");
    t("copd", "treated_by", "bronchodilators");
    t("asthma", "treated_by", "bronchodilators");
    t("pulmonary_embolism", "treated_by", "heparin");
    t("myocardial_infarction", "treated_by", "heparin");
    t("myocardial_infarction", "treated_by", "beta_blockers");
    t("hypertension", "treated_by", "beta_blockers");
    t("cirrhosis", "treated_by", "furosemide");
    t("gi_bleed", "treated_by", "crystalloid_fluids");
    t("pancreatitis", "treated_by", "crystalloid_fluids");
    t("recent_surgery", "treated_by", "acetaminophen");
    t("immunosuppression", "treated_by", "corticosteroids");
    t("stroke", "treated_by", "heparin");

    return ont;
}

namespace {

Ontology lookup_ontology(const kgraph::KgStore& store) {
    Ontology ont;
    ont.sepsis = store.entity_id("sepsis");
    for (const auto& f : kFindings) ont.findings.push_back(store.entity_id(f.name));
    for (const auto& c : kComorbidities) {
        ont.comorbidities.push_back(store.entity_id(c.name));
        ont.comorbidity_weight.push_back(c.weight);
    }
    for (const char* d : kDistractors) ont.distractors.push_back(store.entity_id(d));
    return ont;
}

}  // namespace

Cohort generate_cohort(const CohortConfig& cfg, kgraph::KgStore& store) {
    cfg.validate();
    Ontology ont = store.entity_count() == 0 ? build_ontology(store) : lookup_ontology(store);

    Rng root(cfg.seed);
    Cohort cohort;
    cohort.windows.resize(static_cast<std::size_t>(cfg.n_patients));
    cohort.latents.resize(static_cast<std::size_t>(cfg.n_patients));
    int f_cnt = cfg.feature_count;

    for (int pid = 0; pid < cfg.n_patients; ++pid) {
        Rng r = root.fork("patient").fork(static_cast<std::uint64_t>(pid));
        LatentRecord& lat = cohort.latents[static_cast<std::size_t>(pid)];
        lat.severity = r.uniform01();
        lat.noise = r.uniform01();

        std::vector<int> my_comorb, my_distract;
        for (int c = 0; c < comorbidity_count(); ++c)
            if (r.uniform01() < kComorbidities[c].prevalence) my_comorb.push_back(c);
        for (int d = 0; d < distractor_count(); ++d)
            if (r.uniform01() < kDistractorPrevalence) my_distract.push_back(d);
        lat.comorbidity_load = 0.0;
        for (int c : my_comorb) lat.comorbidity_load += kComorbidities[c].weight;
        lat.risk = risk_score(lat);

        // observation grid
        std::vector<double> times = {0.0};
        double t = 0.0;
        while (true) {
            double gap = -kMeanGap * cfg.irregularity * std::log(1.0 - r.uniform01());
            gap = std::min(std::max(gap, 0.25), 6.0);
            t += gap;
            if (t > 48.0) break;
            times.push_back(t);
        }
        int t_len = static_cast<int>(times.size());

        EpisodeWindow& w = cohort.windows[static_cast<std::size_t>(pid)];
        w.patient_id = pid;
        w.timestamps = times;
        w.values = Tensor({t_len, f_cnt});
        w.observed_mask = Tensor({t_len, f_cnt});

        // per-channel offsets, comorbidity bumps and OU wander
        std::vector<double> offset(static_cast<std::size_t>(f_cnt));
        for (int ch = 0; ch < f_cnt; ++ch)
            offset[static_cast<std::size_t>(ch)] =
                kOffsetSd * kSd[static_cast<std::size_t>(ch)] * r.normal();
        for (int c : my_comorb)
            for (int ch = 0; ch < f_cnt; ++ch)
                offset[static_cast<std::size_t>(ch)] += kComorbidities[c].bump[ch];

        std::vector<double> wander(static_cast<std::size_t>(f_cnt));
        for (int ch = 0; ch < f_cnt; ++ch)
            wander[static_cast<std::size_t>(ch)] =
                kWanderSd * kSd[static_cast<std::size_t>(ch)] * r.normal();

        for (int i = 0; i < t_len; ++i) {
            if (i > 0) {
                double gap = times[static_cast<std::size_t>(i)] -
                             times[static_cast<std::size_t>(i - 1)];
                double decay = std::exp(-gap / kWanderTau);
                double diff = std::sqrt(std::max(0.0, 1.0 - decay * decay));
                for (int ch = 0; ch < f_cnt; ++ch)
                    wander[static_cast<std::size_t>(ch)] =
                        decay * wander[static_cast<std::size_t>(ch)] +
                        kWanderSd * kSd[static_cast<std::size_t>(ch)] * diff * r.normal();
            }
            double ramp =
                std::max(0.0, (times[static_cast<std::size_t>(i)] - kTrendStart) /
                                  (48.0 - kTrendStart));
            for (int ch = 0; ch < f_cnt; ++ch) {
                double v = kBaseline[static_cast<std::size_t>(ch)] +
                           offset[static_cast<std::size_t>(ch)] +
                           wander[static_cast<std::size_t>(ch)] +
                           ramp * lat.severity * kTrendMag[static_cast<std::size_t>(ch)];
                w.values.at(i, ch) = v;
            }
        }

        // missingness: the admission row is fully observed; later rows drop
        // labs at the configured rate and vitals at 0.4x of it
        for (int ch = 0; ch < f_cnt; ++ch) w.observed_mask.at(0, ch) = 1.0;
        for (int i = 1; i < t_len; ++i) {
            int seen = 0;
            for (int ch = 0; ch < f_cnt; ++ch) {
                double drop = ch < 4 ? cfg.missingness * 0.4 : cfg.missingness;
                bool obs = r.uniform01() >= drop;
                w.observed_mask.at(i, ch) = obs ? 1.0 : 0.0;
                seen += obs;
            }
            if (seen == 0) {
                int ch = static_cast<int>(r.uniform_int(4));
                w.observed_mask.at(i, ch) = 1.0;  // a visit records something
            }
        }
        for (int i = 0; i < t_len; ++i)
            for (int ch = 0; ch < f_cnt; ++ch)
                if (w.observed_mask.at(i, ch) == 0.0) w.values.at(i, ch) = 0.0;

        // KG links: assigned diagnoses plus abnormal findings observed in the
        // first 24 hours
        std::set<int> ents;
        for (int c : my_comorb) ents.insert(ont.comorbidities[static_cast<std::size_t>(c)]);
        for (int d : my_distract) ents.insert(ont.distractors[static_cast<std::size_t>(d)]);
        for (int i = 0; i < t_len && w.timestamps[static_cast<std::size_t>(i)] <= 24.0; ++i)
            for (int fi = 0; fi < finding_count(); ++fi) {
                const FindingSpec& fs = kFindings[fi];
                if (w.observed_mask.at(i, fs.channel) == 0.0) continue;
                double v = w.values.at(i, fs.channel);
                if (fs.high ? v > fs.threshold : v < fs.threshold)
                    ents.insert(ont.findings[static_cast<std::size_t>(fi)]);
            }
        w.feature_entities.assign(ents.begin(), ents.end());
    }

    // threshold at the (1 - prevalence) quantile of the realized risks
    std::vector<double> risks;
    risks.reserve(cohort.latents.size());
    for (const auto& l : cohort.latents) risks.push_back(l.risk);
    std::sort(risks.begin(), risks.end(), std::greater<>());
    int n_pos = static_cast<int>(std::lround(cfg.prevalence * cfg.n_patients));
    if (n_pos < 1 || n_pos >= cfg.n_patients)
        throw ConfigError("cohort: prevalence target infeasible at this cohort size");
    cohort.risk_threshold = risks[static_cast<std::size_t>(n_pos - 1)];
    int realized = 0;
    for (int pid = 0; pid < cfg.n_patients; ++pid) {
        bool pos = cohort.latents[static_cast<std::size_t>(pid)].risk >= cohort.risk_threshold;
        cohort.windows[static_cast<std::size_t>(pid)].label = pos ? 1 : 0;
        realized += pos;
    }
    double rate = static_cast<double>(realized) / cfg.n_patients;
    if (std::abs(rate - cfg.prevalence) > 0.05)
        throw ConfigError("cohort: realized prevalence missed the target by over 0.05");
    return cohort;
}

NormStats observed_stats(const std::vector<EpisodeWindow>& windows,
                         const std::vector<int>& idx) {
    int f_cnt = windows.empty() ? static_cast<int>(kChannels.size())
                                : windows.front().values.cols();
    NormStats st;
    st.mean.assign(static_cast<std::size_t>(f_cnt), 0.0);
    st.stdev.assign(static_cast<std::size_t>(f_cnt), 1.0);
    std::vector<double> sum(static_cast<std::size_t>(f_cnt), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(f_cnt), 0.0);
    std::vector<long> count(static_cast<std::size_t>(f_cnt), 0);
    for (int wi : idx) {
        const EpisodeWindow& w = windows[static_cast<std::size_t>(wi)];
        for (int i = 0; i < w.values.rows(); ++i)
            for (int ch = 0; ch < f_cnt; ++ch)
                if (w.observed_mask.at(i, ch) != 0.0) {
                    sum[static_cast<std::size_t>(ch)] += w.values.at(i, ch);
                    ++count[static_cast<std::size_t>(ch)];
                }
    }
    for (int ch = 0; ch < f_cnt; ++ch)
        if (count[static_cast<std::size_t>(ch)] > 0)
            st.mean[static_cast<std::size_t>(ch)] =
                sum[static_cast<std::size_t>(ch)] / count[static_cast<std::size_t>(ch)];
    for (int wi : idx) {
        const EpisodeWindow& w = windows[static_cast<std::size_t>(wi)];
        for (int i = 0; i < w.values.rows(); ++i)
            for (int ch = 0; ch < f_cnt; ++ch)
                if (w.observed_mask.at(i, ch) != 0.0) {
                    double d = w.values.at(i, ch) - st.mean[static_cast<std::size_t>(ch)];
                    sumsq[static_cast<std::size_t>(ch)] += d * d;
                }
    }
    for (int ch = 0; ch < f_cnt; ++ch) {
        if (count[static_cast<std::size_t>(ch)] > 1) {
            double var = sumsq[static_cast<std::size_t>(ch)] /
                         (count[static_cast<std::size_t>(ch)] - 1);
            st.stdev[static_cast<std::size_t>(ch)] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }
    return st;
}

EpisodeWindow preprocess(const EpisodeWindow& raw, const NormStats& stats) {
    int f_cnt = raw.values.cols();
    if (static_cast<int>(stats.mean.size()) != f_cnt ||
        static_cast<int>(stats.stdev.size()) != f_cnt)
        throw ConfigError("preprocess: statistics width does not match channel count");
    EpisodeWindow out = raw;
    for (int ch = 0; ch < f_cnt; ++ch) {
        double carry = stats.mean[static_cast<std::size_t>(ch)];
        for (int i = 0; i < out.values.rows(); ++i) {
            if (out.observed_mask.at(i, ch) != 0.0)
                carry = out.values.at(i, ch);
            else
                out.values.at(i, ch) = carry;
            out.values.at(i, ch) = (out.values.at(i, ch) -
                                    stats.mean[static_cast<std::size_t>(ch)]) /
                                   stats.stdev[static_cast<std::size_t>(ch)];
        }
    }
    return out;
}

std::vector<std::vector<EpisodeWindow>> partition_noniid(
    const std::vector<EpisodeWindow>& cohort, const PartitionSpec& spec, numcore::Rng& rng,
    std::vector<std::string>* events) {
    spec.validate();
    int k_nodes = spec.nodes;
    if (k_nodes > static_cast<int>(cohort.size()))
        throw ConfigError("partition: more nodes than cohort patients");
    if (k_nodes == 1) return {cohort};

    std::vector<std::vector<int>> per_node(static_cast<std::size_t>(k_nodes));
    for (int cls = 0; cls <= 1; ++cls) {
        std::vector<int> members;
        for (std::size_t i = 0; i < cohort.size(); ++i)
            if (cohort[i].label == cls) members.push_back(static_cast<int>(i));
        Rng order = rng.fork(cls == 0 ? "order0" : "order1");
        order.shuffle(members);
        Rng dir = rng.fork(cls == 0 ? "dir0" : "dir1");
        std::vector<double> props = dir.dirichlet(spec.alpha_dir, k_nodes);
        // largest-remainder apportionment so counts sum exactly
        int m = static_cast<int>(members.size());
        std::vector<int> cnt(static_cast<std::size_t>(k_nodes));
        std::vector<std::pair<double, int>> rem;
        int assigned = 0;
        for (int k = 0; k < k_nodes; ++k) {
            double want = props[static_cast<std::size_t>(k)] * m;
            cnt[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(want));
            assigned += cnt[static_cast<std::size_t>(k)];
            rem.emplace_back(want - std::floor(want), k);
        }
        std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int i = 0; i < m - assigned; ++i)
            ++cnt[static_cast<std::size_t>(rem[static_cast<std::size_t>(i)].second)];
        int pos = 0;
        for (int k = 0; k < k_nodes; ++k)
            for (int c = 0; c < cnt[static_cast<std::size_t>(k)]; ++c)
                per_node[static_cast<std::size_t>(k)].push_back(
                    members[static_cast<std::size_t>(pos++)]);
    }

    // no node may come up empty
    for (int k = 0; k < k_nodes; ++k) {
        if (!per_node[static_cast<std::size_t>(k)].empty()) continue;
        int biggest = 0;
        for (int j = 1; j < k_nodes; ++j)
            if (per_node[static_cast<std::size_t>(j)].size() >
                per_node[static_cast<std::size_t>(biggest)].size())
                biggest = j;
        per_node[static_cast<std::size_t>(k)].push_back(
            per_node[static_cast<std::size_t>(biggest)].back());
        per_node[static_cast<std::size_t>(biggest)].pop_back();
        if (events)
            events->push_back("partition: moved one patient from node " +
                              std::to_string(biggest) + " to empty node " + std::to_string(k));
    }

    std::vector<std::vector<EpisodeWindow>> out(static_cast<std::size_t>(k_nodes));
    for (int k = 0; k < k_nodes; ++k) {
        Rng shift_rng = rng.fork("shift").fork(static_cast<std::uint64_t>(k));
        int f_cnt = static_cast<int>(kChannels.size());
        std::vector<double> off(static_cast<std::size_t>(f_cnt));
        std::vector<double> scale(static_cast<std::size_t>(f_cnt));
        for (int ch = 0; ch < f_cnt; ++ch) {
            off[static_cast<std::size_t>(ch)] =
                spec.shift_offset * kSd[static_cast<std::size_t>(ch)] * shift_rng.normal();
            scale[static_cast<std::size_t>(ch)] = std::exp(spec.shift_scale * shift_rng.normal());
        }
        std::sort(per_node[static_cast<std::size_t>(k)].begin(),
                  per_node[static_cast<std::size_t>(k)].end());
        for (int wi : per_node[static_cast<std::size_t>(k)]) {
            EpisodeWindow w = cohort[static_cast<std::size_t>(wi)];
            for (int i = 0; i < w.values.rows(); ++i)
                for (int ch = 0; ch < w.values.cols(); ++ch)
                    if (w.observed_mask.at(i, ch) != 0.0) {
                        double center = kBaseline[static_cast<std::size_t>(ch)];
                        w.values.at(i, ch) = center +
                                             (w.values.at(i, ch) - center) *
                                                 scale[static_cast<std::size_t>(ch)] +
                                             off[static_cast<std::size_t>(ch)];
                    }
            out[static_cast<std::size_t>(k)].push_back(std::move(w));
        }
    }
    return out;
}

std::vector<double> trend_features(const EpisodeWindow& w, double hours_back) {
    int f_cnt = w.values.cols();
    std::vector<double> slopes(static_cast<std::size_t>(f_cnt), 0.0);
    if (w.timestamps.empty()) return slopes;
    double t_end = w.timestamps.back();
    double t_from = t_end - hours_back;
    for (int ch = 0; ch < f_cnt; ++ch) {
        double st = 0, sv = 0;
        int n = 0;
        for (int i = 0; i < w.values.rows(); ++i)
            if (w.observed_mask.at(i, ch) != 0.0 &&
                w.timestamps[static_cast<std::size_t>(i)] >= t_from) {
                st += w.timestamps[static_cast<std::size_t>(i)];
                sv += w.values.at(i, ch);
                ++n;
            }
        if (n < 2) continue;
        double mt = st / n, mv = sv / n;
        double num = 0, den = 0;
        for (int i = 0; i < w.values.rows(); ++i)
            if (w.observed_mask.at(i, ch) != 0.0 &&
                w.timestamps[static_cast<std::size_t>(i)] >= t_from) {
                double dt = w.timestamps[static_cast<std::size_t>(i)] - mt;
                num += dt * (w.values.at(i, ch) - mv);
                den += dt * dt;
            }
        if (den > 1e-12) slopes[static_cast<std::size_t>(ch)] = num / den;
    }
    return slopes;
}

void save_cohort(const Cohort& c, const kgraph::KgStore& store, std::ostream& obs_out,
                 std::ostream& label_out) {
    for (const EpisodeWindow& w : c.windows)
        for (int i = 0; i < w.values.rows(); ++i)
            for (int ch = 0; ch < w.values.cols(); ++ch) {
                if (w.observed_mask.at(i, ch) == 0.0) continue;
                obs_out << w.patient_id << '\t';
                fmt_g(obs_out, w.timestamps[static_cast<std::size_t>(i)]);
                obs_out << '\t' << kChannels[static_cast<std::size_t>(ch)] << '\t';
                fmt_g(obs_out, w.values.at(i, ch));
                obs_out << '\n';
            }
    label_out << "# risk_threshold ";
    fmt_g(label_out, c.risk_threshold);
    label_out << '\n';
    for (std::size_t i = 0; i < c.windows.size(); ++i) {
        const EpisodeWindow& w = c.windows[i];
        const LatentRecord& l = c.latents[i];
        label_out << w.patient_id << '\t' << w.label << '\t';
        fmt_g(label_out, l.severity);
        label_out << '\t';
        fmt_g(label_out, l.comorbidity_load);
        label_out << '\t';
        fmt_g(label_out, l.noise);
        label_out << '\t';
        fmt_g(label_out, l.risk);
        label_out << '\t';
        if (w.feature_entities.empty()) {
            label_out << '-';
        } else {
            for (std::size_t e = 0; e < w.feature_entities.size(); ++e) {
                if (e) label_out << ',';
                label_out << store.entity_name(w.feature_entities[e]);
            }
        }
        label_out << '\n';
    }
}

Cohort load_cohort(std::istream& obs_in, std::istream& label_in, const kgraph::KgStore& store) {
    struct Obs {
        double time;
        int channel;
        double value;
    };
    std::map<int, std::vector<Obs>> by_patient;
    std::map<std::string, int> channel_idx;
    for (std::size_t ch = 0; ch < kChannels.size(); ++ch)
        channel_idx[kChannels[ch]] = static_cast<int>(ch);

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(obs_in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 4)
            throw DataError("cohort observations: malformed line " + std::to_string(lineno));
        auto it = channel_idx.find(f[2]);
        if (it == channel_idx.end())
            throw DataError("cohort observations: unknown channel at line " +
                            std::to_string(lineno));
        try {
            by_patient[std::stoi(f[0])].push_back({std::stod(f[1]), it->second, std::stod(f[3])});
        } catch (const std::exception&) {
            throw DataError("cohort observations: unparsable field at line " +
                            std::to_string(lineno));
        }
    }

    Cohort c;
    lineno = 0;
    bool have_threshold = false;
    while (std::getline(label_in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("# risk_threshold ", 0) == 0) {
            try {
                c.risk_threshold = std::stod(line.substr(17));
            } catch (const std::exception&) {
                throw DataError("cohort labels: bad risk_threshold header");
            }
            have_threshold = true;
            continue;
        }
        auto f = split_tabs(line);
        if (f.size() != 7)
            throw DataError("cohort labels: malformed line " + std::to_string(lineno));
        EpisodeWindow w;
        LatentRecord l;
        try {
            w.patient_id = std::stoi(f[0]);
            w.label = std::stoi(f[1]);
            l.severity = std::stod(f[2]);
            l.comorbidity_load = std::stod(f[3]);
            l.noise = std::stod(f[4]);
            l.risk = std::stod(f[5]);
        } catch (const std::exception&) {
            throw DataError("cohort labels: unparsable field at line " + std::to_string(lineno));
        }
        if (f[6] != "-") {
            std::stringstream ss(f[6]);
            std::string name;
            std::set<int> ents;
            while (std::getline(ss, name, ','))
                ents.insert(store.entity_id(name));  // throws LookupError on unknowns
            w.feature_entities.assign(ents.begin(), ents.end());
        }

        auto obs_it = by_patient.find(w.patient_id);
        if (obs_it == by_patient.end())
            throw DataError("cohort labels: patient " + std::to_string(w.patient_id) +
                            " has no observations");
        const std::vector<Obs>& obs = obs_it->second;
        int f_cnt = static_cast<int>(kChannels.size());
        for (const Obs& o : obs) {
            if (w.timestamps.empty() || o.time > w.timestamps.back())
                w.timestamps.push_back(o.time);
            else if (o.time < w.timestamps.back())
                throw DataError("cohort observations: timestamps out of order for patient " +
                                std::to_string(w.patient_id));
        }
        int t_len = static_cast<int>(w.timestamps.size());
        w.values = Tensor({t_len, f_cnt});
        w.observed_mask = Tensor({t_len, f_cnt});
        int row = 0;
        for (const Obs& o : obs) {
            while (w.timestamps[static_cast<std::size_t>(row)] != o.time) ++row;
            w.values.at(row, o.channel) = o.value;
            w.observed_mask.at(row, o.channel) = 1.0;
        }
        c.windows.push_back(std::move(w));
        c.latents.push_back(l);
    }
    if (!have_threshold) throw DataError("cohort labels: missing risk_threshold header");
    return c;
}

}  // namespace sepsisfl::synthdata
