#pragma once

#include <map>
#include <string>
#include <vector>

namespace cda::fixtures {

struct MetricCase {
  std::string prediction;
  std::string gold;
  int em;
  double f1;
};

// Scored by hand: lowercase, drop ASCII punctuation, drop a/an/the, split on whitespace.
inline const std::vector<MetricCase>& metric_cases() {
  static const std::vector<MetricCase> cases = {
      {"the cat", "The Cat.", 1, 1.0},
      {"cat", "cats", 0, 0.0},
      {"", "", 1, 1.0},
      {"a cat", "the cat", 1, 1.0},
      {"black cat", "cat food", 0, 0.5},
      {"Paris", "paris", 1, 1.0},
      {"in Paris, France", "Paris", 0, 0.5},               // P 1/3, R 1
      {"the the the", "", 1, 1.0},                         // both normalize to empty
      {"cat", "", 0, 0.0},
      {"", "dog", 0, 0.0},
      {"cat cat", "cat", 0, 2.0 / 3.0},                    // overlap counted once
      {"cat cat dog", "cat dog dog", 0, 2.0 / 3.0},        // overlap {cat, dog}
      {"New York City", "new york", 0, 0.8},               // P 2/3, R 1
      {"U.S.A.", "USA", 1, 1.0},
      {"don't", "dont", 1, 1.0},
      {"an apple a day", "apple day", 1, 1.0},
      {"  multiple   spaces ", "multiple spaces", 1, 1.0},
      {"1,000", "1000", 1, 1.0},
      {"answer: 42", "42", 0, 2.0 / 3.0},                  // P 1/2, R 1
      {"theater", "the ater", 0, 0.0},                     // articles only as whole words
      {"The Beatles", "Beatles", 1, 1.0},
      {"anthem", "an them", 0, 0.0},
      {"red blue green", "green blue red", 0, 1.0},
      {"Mr. Smith", "mr smith", 1, 1.0},
      {"a", "an", 1, 1.0},
  };
  return cases;
}

struct LabeledQuestion {
  std::string question;
  std::string label;
};

// Five questions per domain. Each domain mixes the first-three-token and
// last-token branches; "other" includes a question word outside both windows.
inline const std::vector<LabeledQuestion>& question_fixture() {
  static const std::vector<LabeledQuestion> q = {
      {"What is the capital of France?", "what"},
      {"So what did he say?", "what"},
      {"And then what happened?", "what"},
      {"The tallest mountain is what?", "what"},
      {"what year did it end?", "what"},
      {"Which river is longest?", "which"},
      {"In which year did it start?", "which"},
      {"Of which kingdom was he king?", "which"},
      {"The answer is which?", "which"},
      {"Which one?", "which"},
      {"Where is Paris?", "where"},
      {"From where did they come?", "where"},
      {"And where was it?", "where"},
      {"The capital of France is where?", "where"},
      {"Where?", "where"},
      {"When did it end?", "when"},
      {"Since when has it run?", "when"},
      {"Exactly when was it built?", "when"},
      {"The war ended when?", "when"},
      {"When was the treaty signed?", "when"},
      {"How many people live there?", "how"},
      {"And how did it work?", "how"},
      {"Exactly how tall is it?", "how"},
      {"The machine works how?", "how"},
      {"How?", "how"},
      {"Why did the empire fall?", "why"},
      {"But why is that?", "why"},
      {"And so why did they leave?", "why"},
      {"The old empire fell, but why?", "why"},
      {"Why not?", "why"},
      {"Name the capital of France.", "other"},
      {"Give the year of the treaty.", "other"},
      {"The name of the river is?", "other"},
      {"Is Paris in France?", "other"},
      {"List three rivers of Europe that flow north and what they feed.", "other"},
      {"Who wrote Hamlet?", "who"},
      {"And who won?", "who"},
      {"Tell me who won?", "who"},
      {"Hamlet was written by who?", "who"},
      {"Who?", "who"},
  };
  return q;
}

}  // namespace cda::fixtures
