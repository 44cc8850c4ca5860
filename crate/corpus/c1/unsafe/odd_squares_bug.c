s = 0;
for (i = 0; i < N; i++) {
  s = s + 2 * i;
}
// assert(s == N * N)
