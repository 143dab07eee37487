#include "ncelab/noisedesign.hpp"
#include "ncelab/empirical.hpp"
#include "ncelab/partition.hpp"
#include "ncelab/divergence.hpp"
#include <cstdio>
int main(){ std::puts("ok"); }
