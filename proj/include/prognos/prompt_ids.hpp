#pragma once

// Template ids shipped under prompts/. Bump the suffix when a template's
// contract (variables or expected answer format) changes.
namespace prognos::prompt_ids {

inline constexpr const char* kWsiGlobal = "wsi.global.v1";
inline constexpr const char* kWsiPatchBrief = "wsi.patch_brief.v1";
inline constexpr const char* kWsiPatchDetail = "wsi.patch_detail.v1";
inline constexpr const char* kWsiConfidence = "wsi.confidence.v1";
inline constexpr const char* kWsiExtract = "wsi.extract.v1";
inline constexpr const char* kWsiSummarize = "wsi.summarize.v1";

inline constexpr const char* kGeneSelect = "gene.select.v1";
inline constexpr const char* kGeneCategoryReport = "gene.category_report.v1";
inline constexpr const char* kGeneSummarize = "gene.summarize.v1";

inline constexpr const char* kCotGenerate = "cot.generate.v1";
inline constexpr const char* kCotCritique = "cot.critique.v1";
inline constexpr const char* kCotRefine = "cot.refine.v1";

inline constexpr const char* kInferDichotomy = "infer.dichotomy.v1";
inline constexpr const char* kInferTime = "infer.time.v1";

// Appended as {feedback} on a re-prompt after an unparseable answer.
inline constexpr const char* kRetryFeedback =
    "Your previous answer could not be parsed. Reply again using exactly the requested format.";

}  // namespace prognos::prompt_ids
