#include "nfa/flow/blocks.hpp"

namespace nfa::flow {

std::vector<std::size_t> squeeze_index(const ImageShape& in) {
  require(in.height % 2 == 0 && in.width % 2 == 0,
          "squeeze: height and width must be even, got " + std::to_string(in.height) + "x" +
              std::to_string(in.width));
  const std::size_t oh = in.height / 2, ow = in.width / 2;
  std::vector<std::size_t> index(in.size());
  for (std::size_t c = 0; c < in.channels; ++c)
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t oc = 4 * c + 2 * dy + dx;
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            const std::size_t dst = (oc * oh + i) * ow + j;
            const std::size_t src = (c * in.height + 2 * i + dy) * in.width + 2 * j + dx;
            index[dst] = src;
          }
      }
  return index;
}

}  // namespace nfa::flow
