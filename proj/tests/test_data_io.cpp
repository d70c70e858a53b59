#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "deepatt/data_io.hpp"

using namespace deepatt;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "deepatt_data_io_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

LabeledSentence sentence(std::vector<std::string> words) {
  LabeledSentence s;
  s.mask.assign(words.size(), 0);
  s.mask[0] = 1;
  s.words = std::move(words);
  return s;
}

}  // namespace

TEST_CASE("parse the paper's example sentence") {
  const Corpus c = parse_corpus_text("Marry 0 B-ARG0\nborrowed 1 B-V\na 0 B-ARG1\nbook 0 I-ARG1\n\n");
  REQUIRE(c.size() == 1);
  CHECK(c[0].words == std::vector<std::string>{"Marry", "borrowed", "a", "book"});
  CHECK(c[0].mask == std::vector<std::uint8_t>{0, 1, 0, 0});
  CHECK(c[0].tags == std::vector<std::string>{"B-ARG0", "B-V", "B-ARG1", "I-ARG1"});
}

TEST_CASE("parse edge cases") {
  CHECK(parse_corpus_text("").empty());
  CHECK(parse_corpus_text("\n\n").empty());
  const Corpus untagged = parse_corpus_text("a 0\nb 1\n");
  REQUIRE(untagged.size() == 1);
  CHECK_FALSE(untagged[0].has_tags());
  const Corpus two = parse_corpus_text("a 1 B-V\n\n\nb 1 B-V\nc 0 O\n");
  CHECK(two.size() == 2);
}

TEST_CASE("parse errors name the line") {
  auto message = [](const std::string& text) {
    try {
      parse_corpus_text(text, "toy.txt");
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("a 0 O\nb 2 B-V\n").find("toy.txt:2") != std::string::npos);
  CHECK(message("a 1 B-V\nb 0\n").find("toy.txt:2") != std::string::npos);
  CHECK(message("a 1 B-V\nb 0 X-A0\n").find("toy.txt:2") != std::string::npos);
  CHECK(message("a 1 B-V\nb 0 O extra\n").find("toy.txt:2") != std::string::npos);
  CHECK_FALSE(message("a 1 B-V\nb 0 O\nc 1 O\n").empty());
  CHECK_FALSE(message("a 0 O\nb 0 O\n").empty());
  CHECK_THROWS_AS(parse_corpus(temp_path("does_not_exist.txt")), DataError);
}

TEST_CASE("parse, serialize, parse round trip") {
  const Corpus c = generate_synthetic_corpus(30, 4);
  const std::string text = serialize_corpus(c);
  CHECK(parse_corpus_text(text) == c);
  CHECK(serialize_corpus(parse_corpus_text(text)) == text);
  const std::string path = temp_path("roundtrip.txt");
  write_corpus(path, c);
  CHECK(parse_corpus(path) == c);
}

TEST_CASE("vocabulary construction") {
  SUBCASE("single word") {
    const auto v = build_vocab({sentence({"x", "x", "x"})});
    CHECK(v.words() == std::vector<std::string>{"<pad>", "<unk>", "x"});
  }
  SUBCASE("equal frequencies break lexicographically") {
    const auto v = build_vocab({sentence({"pear", "apple", "fig", "fig"})});
    CHECK(v.words() == std::vector<std::string>{"<pad>", "<unk>", "fig", "apple", "pear"});
  }
  SUBCASE("min_count drops singletons") {
    const auto v = build_vocab({sentence({"a", "b", "b", "c"})}, 2);
    CHECK(v.words() == std::vector<std::string>{"<pad>", "<unk>", "b"});
    CHECK(v.lookup("a") == Vocabulary::kUnknown);
  }
  SUBCASE("lookup rules") {
    const auto v = build_vocab({sentence({"the", "The", "dog"})});
    CHECK(v.lookup("The") == *v.find("The"));
    CHECK(v.lookup("DOG") == *v.find("dog"));
    CHECK(v.lookup("cat") == Vocabulary::kUnknown);
    for (std::size_t id = 0; id < v.size(); ++id) CHECK(v.lookup(v.word(id)) == id);
  }
}

TEST_CASE("vocabulary ignores corpus order") {
  const Corpus a = generate_synthetic_corpus(10, 1), b = generate_synthetic_corpus(10, 2);
  Corpus ab = a, ba = b;
  ab.insert(ab.end(), b.begin(), b.end());
  ba.insert(ba.end(), a.begin(), a.end());
  CHECK(build_vocab(ab) == build_vocab(ba));
}

TEST_CASE("word and tag lists round trip through files") {
  const auto v = build_vocab(generate_synthetic_corpus(10, 3));
  const std::string path = temp_path("vocab.words");
  write_lines(path, v.words());
  CHECK(Vocabulary::from_words(read_lines(path)) == v);
  CHECK_THROWS_AS(Vocabulary::from_words({"a", "b"}), DataError);
}

TEST_CASE("pretrained embeddings") {
  const auto v = Vocabulary::from_words({"<pad>", "<unk>", "cat", "dog"});
  Tensor<float> table({4, 3}, std::vector<float>(12, 7.0f));
  const std::string path = temp_path("emb.txt");
  write_file(path, "Dog 0.5 -1 2\nzebra 1 1 1\n");
  CHECK(load_pretrained_embeddings(path, v, 3, table) == 1);
  CHECK(table.data()[3 * 3 + 0] == 0.5f);
  CHECK(table.data()[3 * 3 + 1] == -1.0f);
  CHECK(table.data()[2 * 3 + 0] == 7.0f);
  write_file(path, "dog 0.5 -1\n");
  CHECK_THROWS_AS(load_pretrained_embeddings(path, v, 3, table), DataError);
}

TEST_CASE("token-budget batching") {
  const auto b = batch_by_tokens({5, 5, 5}, 10, 1);
  std::multiset<std::size_t> sizes;
  for (const auto& x : b) sizes.insert(x.size());
  CHECK(sizes == std::multiset<std::size_t>{1, 2});
  CHECK(batch_by_tokens({10}, 10, 1) == std::vector<std::vector<std::size_t>>{{0}});
  CHECK_THROWS_AS(batch_by_tokens({11}, 10, 1), DataError);
  CHECK(batch_by_tokens({}, 10, 1).empty());

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::vector<std::size_t> lengths(300);
  for (auto& l : lengths) l = len(rng);
  const auto batches = batch_by_tokens(lengths, 128, 9);
  CHECK(batches == batch_by_tokens(lengths, 128, 9));
  std::vector<int> seen(lengths.size(), 0);
  for (const auto& batch : batches) {
    std::size_t longest = 0;
    for (std::size_t i : batch) {
      longest = std::max(longest, lengths[i]);
      ++seen[i];
    }
    CHECK(batch.size() * longest <= 128);
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("batch assembly pads and maps ids") {
  const Corpus c = parse_corpus_text("the 0 B-A0\ndog 1 B-V\n\nit 1 B-V\n");
  const auto vocab = build_vocab(c);
  const auto tags = build_tagset(c);
  const Batch b = make_batch({&c[0], &c[1]}, vocab, &tags);
  CHECK(b.size == 2);
  CHECK(b.max_len == 2);
  CHECK(b.words[3] == Vocabulary::kPad);
  CHECK(b.tags[3] == -1);
  CHECK(b.tags[0] == static_cast<int>(tags.id("B-A0")));
  CHECK(b.padding.lengths == std::vector<std::size_t>{2, 1});
  const Batch untagged = make_batch({&c[0]}, vocab, nullptr);
  for (int t : untagged.tags) CHECK(t == -1);
}

TEST_CASE("synthetic corpus shape") {
  const Corpus c = generate_synthetic_corpus(50, 7);
  CHECK(c.size() == 50);
  CHECK(build_vocab(c).size() <= 40);
  std::set<std::string> roles;
  for (const auto& s : c)
    for (const auto& t : s.tags)
      if (t != "O") roles.insert(t.substr(2));
  roles.erase("V");
  CHECK(roles == std::set<std::string>{"A0", "A1", "A2", "AM-LOC", "AM-TMP"});
  CHECK(generate_synthetic_corpus(50, 7) == c);
}
