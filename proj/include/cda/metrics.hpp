#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cda {

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view s);

/// 1 iff the normalized strings are equal.
int em_score(std::string_view prediction, std::string_view gold);

/// Bag-of-words F1 over normalized tokens with multiset overlap.
/// Both sides empty gives 1; exactly one empty gives 0.
double f1_score(std::string_view prediction, std::string_view gold);

/// Max over gold answers.
int em_max(std::string_view prediction, const std::vector<std::string>& golds);
double f1_max(std::string_view prediction, const std::vector<std::string>& golds);

}  // namespace cda
