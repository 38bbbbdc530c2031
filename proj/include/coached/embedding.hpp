#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace coached {

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

double l2_norm(const EmbeddingVector& v);
// Unit-length copy; the zero vector stays zero.
EmbeddingVector normalized(EmbeddingVector v);

// dot(a,b)/(|a||b|), 0 when either norm is 0. Throws Error(kDimMismatch).
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Maps text to vectors. tag() identifies the fitted model or remote endpoint;
// an index only answers queries embedded under the tag it was built with.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string tag() const = 0;
  virtual EmbeddingVector embed(const std::string& text) const = 0;
};

}  // namespace coached
