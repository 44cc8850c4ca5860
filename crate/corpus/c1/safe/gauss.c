s = 0;
for (i = 0; i < N; i++) {
  s = s + i;
}
// assert(2 * s == N * (N - 1))
